#include <gtest/gtest.h>

#include "fgovd/autodiff.hpp"
#include "fgovd/rng.hpp"
#include "fgovd/tensor.hpp"

using namespace fgovd;

namespace {

// central finite differences on an arbitrary scalar graph function
template <typename BuildFn>
void check_gradients(BuildFn build, std::vector<Mat>& inputs, double step = 1e-6,
                     double tol = 1e-6) {
    ad::Graph g;
    std::vector<ad::Node*> leaves;
    for (auto& m : inputs) leaves.push_back(g.leaf(m, true));
    ad::Node* loss = build(g, leaves);
    g.backward(loss);

    for (size_t t = 0; t < inputs.size(); ++t) {
        for (size_t i = 0; i < inputs[t].a.size(); ++i) {
            double saved = inputs[t].a[i];
            auto eval = [&](double v) {
                inputs[t].a[i] = v;
                ad::Graph g2;
                std::vector<ad::Node*> l2;
                for (auto& m : inputs) l2.push_back(g2.leaf(m, false));
                double out = build(g2, l2)->val.a[0];
                inputs[t].a[i] = saved;
                return out;
            };
            double fd = (eval(saved + step) - eval(saved - step)) / (2 * step);
            double an = leaves[t]->grad.a[i];
            double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
            ASSERT_LT(err, tol) << "tensor " << t << " element " << i << " fd=" << fd
                                << " analytic=" << an;
        }
    }
}

Mat random_mat(int r, int c, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return Mat::gaussian(r, c, rng, scale);
}

} // namespace

TEST(Rng, DeterministicAcrossInstances) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    Rng c(43);
    EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, GaussianMoments) {
    Rng rng(7);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = rng.gaussian();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.03);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Tensor, MatmulAgainstManual) {
    Mat a(2, 3), b(3, 2);
    a.a = {1, 2, 3, 4, 5, 6};
    b.a = {7, 8, 9, 10, 11, 12};
    Mat c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 58);
    EXPECT_DOUBLE_EQ(c.at(0, 1), 64);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 139);
    EXPECT_DOUBLE_EQ(c.at(1, 1), 154);
}

TEST(Autodiff, MatmulChainGradients) {
    std::vector<Mat> inputs = {random_mat(3, 4, 1), random_mat(4, 2, 2)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) { return g.sum(g.matmul(l[0], l[1])); }, inputs);
}

TEST(Autodiff, SoftmaxRowsGradients) {
    std::vector<Mat> inputs = {random_mat(3, 5, 3)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            ad::Node* s = g.softmax_rows(l[0]);
            return g.sum(g.mul(s, s)); // nontrivial downstream
        },
        inputs);
}

TEST(Autodiff, NormalizeRowsGradients) {
    std::vector<Mat> inputs = {random_mat(2, 6, 4)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            ad::Node* n = g.l2_normalize_rows(l[0]);
            Mat w = random_mat(2, 6, 5);
            return g.sum(g.mul(n, g.constant(w)));
        },
        inputs);
}

TEST(Autodiff, SigmoidReluAbsClampGradients) {
    std::vector<Mat> inputs = {random_mat(3, 3, 6)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            ad::Node* x = g.sigmoid(l[0]);
            x = g.add(x, g.relu(l[0]));
            x = g.add(x, g.abs(l[0]));
            x = g.add(x, g.clamp(l[0], -0.5, 0.5));
            return g.sum(x);
        },
        inputs);
}

TEST(Autodiff, AttentionBlockGradients) {
    std::vector<Mat> inputs = {random_mat(2, 4, 7), random_mat(5, 4, 8), random_mat(5, 4, 9)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            return g.sum(g.attention(l[0], l[1], l[2], 2.0));
        },
        inputs);
}

TEST(Autodiff, BceLogitsMatchesClosedForm) {
    Mat logits(1, 3);
    logits.a = {0.0, 2.0, -1.5};
    Mat targets(1, 3);
    targets.a = {0.0, 1.0, 0.0};
    Mat weights(1, 3, 1.0);
    ad::Graph g;
    ad::Node* l = g.leaf(logits, true);
    ad::Node* loss = g.bce_logits_sum(l, targets, weights);
    double expected = std::log(2.0) + std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.5));
    EXPECT_NEAR(loss->val.a[0], expected, 1e-12);

    g.backward(loss);
    for (int i = 0; i < 3; ++i) {
        double sig = 1.0 / (1.0 + std::exp(-logits.a[i]));
        EXPECT_NEAR(l->grad.a[i], sig - targets.a[i], 1e-12);
    }
}

TEST(Autodiff, BceLogitsGradients) {
    std::vector<Mat> inputs = {random_mat(4, 3, 10)};
    Mat targets(4, 3);
    targets.at(0, 1) = 1.0;
    targets.at(2, 0) = 1.0;
    Mat weights(4, 3, 0.5);
    check_gradients(
        [&](ad::Graph& g, std::vector<ad::Node*>& l) {
            return g.bce_logits_sum(l[0], targets, weights);
        },
        inputs);
}

TEST(Autodiff, GatherSelectConcatGradients) {
    std::vector<Mat> inputs = {random_mat(4, 3, 11), random_mat(2, 3, 12)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            ad::Node* sel = g.select_rows(l[0], {2, 0, 2});
            ad::Node* cat = g.concat_rows({sel, l[1]});
            ad::Node* picked = g.gather(cat, {{0, 1}, {4, 2}, {2, 0}});
            return g.sum(g.mul(picked, picked));
        },
        inputs);
}

TEST(Autodiff, LogFlooredGradientsAwayFromFloor) {
    Mat x(1, 3);
    x.a = {0.5, 2.0, 1e-15}; // last entry sits below the floor: zero gradient
    ad::Graph g;
    ad::Node* l = g.leaf(x, true);
    ad::Node* loss = g.sum(g.log_floored(l, 1e-12));
    g.backward(loss);
    EXPECT_NEAR(l->grad.a[0], 2.0, 1e-12);
    EXPECT_NEAR(l->grad.a[1], 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(l->grad.a[2], 0.0);
    EXPECT_NEAR(loss->val.a[0], std::log(0.5) + std::log(2.0) + std::log(1e-12), 1e-9);
}

TEST(Autodiff, MeanRowsAndAddRowvec) {
    std::vector<Mat> inputs = {random_mat(3, 4, 13), random_mat(1, 4, 14)};
    check_gradients(
        [](ad::Graph& g, std::vector<ad::Node*>& l) {
            return g.sum(g.mean_rows(g.add_rowvec(l[0], l[1])));
        },
        inputs);
}
