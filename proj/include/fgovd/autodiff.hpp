#pragma once

// Reverse-mode autodiff over Mat values. A Graph owns its nodes; ops append
// nodes in topological order, backward() walks the tape in reverse. Gradients
// only propagate into nodes with needs_grad set, so inference can run the
// same builders with grad tracking off.

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fgovd/tensor.hpp"

namespace fgovd::ad {

struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Node&)> back; // pulls this->grad into parents

    void ensure_grad() {
        if (!grad.same_shape(val)) grad = Mat(val.rows, val.cols);
    }
};

class Graph {
public:
    Node* leaf(Mat v, bool needs_grad = false) {
        auto n = std::make_unique<Node>();
        n->val = std::move(v);
        n->needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    Node* constant(Mat v) { return leaf(std::move(v), false); }

    void backward(Node* loss) {
        if (loss->val.rows != 1 || loss->val.cols != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        for (auto& n : nodes_) {
            if (n->needs_grad) n->ensure_grad();
        }
        loss->ensure_grad();
        loss->grad.a[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node* n = it->get();
            if (n->needs_grad && n->back) n->back(*n);
        }
    }

    size_t node_count() const { return nodes_.size(); }

    // ---- ops ----

    Node* add(Node* a, Node* b) {
        check_same(a, b, "add");
        Mat v = a->val;
        for (size_t i = 0; i < v.a.size(); ++i) v.a[i] += b->val.a[i];
        return unary_or_binary(std::move(v), a, b, [](Node& out, Node* a, Node* b) {
            if (a->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) a->grad.a[i] += out.grad.a[i];
            if (b->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) b->grad.a[i] += out.grad.a[i];
        });
    }

    Node* sub(Node* a, Node* b) {
        check_same(a, b, "sub");
        Mat v = a->val;
        for (size_t i = 0; i < v.a.size(); ++i) v.a[i] -= b->val.a[i];
        return unary_or_binary(std::move(v), a, b, [](Node& out, Node* a, Node* b) {
            if (a->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) a->grad.a[i] += out.grad.a[i];
            if (b->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) b->grad.a[i] -= out.grad.a[i];
        });
    }

    Node* mul(Node* a, Node* b) {
        check_same(a, b, "mul");
        Mat v = a->val;
        for (size_t i = 0; i < v.a.size(); ++i) v.a[i] *= b->val.a[i];
        return unary_or_binary(std::move(v), a, b, [](Node& out, Node* a, Node* b) {
            if (a->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) a->grad.a[i] += out.grad.a[i] * b->val.a[i];
            if (b->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) b->grad.a[i] += out.grad.a[i] * a->val.a[i];
        });
    }

    Node* scale(Node* a, double s) {
        Mat v = a->val;
        for (auto& x : v.a) x *= s;
        return unary(std::move(v), a, [s](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i) a->grad.a[i] += s * out.grad.a[i];
        });
    }

    Node* matmul(Node* a, Node* b) {
        Mat v = fgovd::matmul(a->val, b->val);
        return unary_or_binary(std::move(v), a, b, [](Node& out, Node* a, Node* b) {
            if (a->needs_grad) {
                // dA = dOut * B^T
                Mat da = fgovd::matmul(out.grad, fgovd::transpose(b->val));
                for (size_t i = 0; i < da.a.size(); ++i) a->grad.a[i] += da.a[i];
            }
            if (b->needs_grad) {
                // dB = A^T * dOut
                Mat db = fgovd::matmul(fgovd::transpose(a->val), out.grad);
                for (size_t i = 0; i < db.a.size(); ++i) b->grad.a[i] += db.a[i];
            }
        });
    }

    // broadcast a 1xC bias over every row of a RxC matrix
    Node* add_rowvec(Node* a, Node* bias) {
        if (bias->val.rows != 1 || bias->val.cols != a->val.cols)
            throw std::invalid_argument("add_rowvec: bias shape");
        Mat v = a->val;
        for (int r = 0; r < v.rows; ++r)
            for (int c = 0; c < v.cols; ++c) v.at(r, c) += bias->val.at(0, c);
        return unary_or_binary(std::move(v), a, bias, [](Node& out, Node* a, Node* bias) {
            if (a->needs_grad)
                for (size_t i = 0; i < out.grad.a.size(); ++i) a->grad.a[i] += out.grad.a[i];
            if (bias->needs_grad)
                for (int r = 0; r < out.grad.rows; ++r)
                    for (int c = 0; c < out.grad.cols; ++c) bias->grad.at(0, c) += out.grad.at(r, c);
        });
    }

    Node* relu(Node* a) {
        Mat v = a->val;
        for (auto& x : v.a) x = x > 0.0 ? x : 0.0;
        return unary(std::move(v), a, [](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i)
                if (a->val.a[i] > 0.0) a->grad.a[i] += out.grad.a[i];
        });
    }

    Node* sigmoid(Node* a) {
        Mat v = a->val;
        for (auto& x : v.a) x = stable_sigmoid(x);
        Node* out = unary(Mat(v), a, [](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i) {
                double y = out.val.a[i];
                a->grad.a[i] += out.grad.a[i] * y * (1.0 - y);
            }
        });
        out->val = std::move(v);
        return out;
    }

    Node* clamp(Node* a, double lo, double hi) {
        Mat v = a->val;
        for (auto& x : v.a) x = x < lo ? lo : (x > hi ? hi : x);
        return unary(std::move(v), a, [lo, hi](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i) {
                double x = a->val.a[i];
                if (x > lo && x < hi) a->grad.a[i] += out.grad.a[i];
            }
        });
    }

    Node* softmax_rows(Node* a) {
        Mat v = a->val;
        for (int r = 0; r < v.rows; ++r) {
            double mx = v.at(r, 0);
            for (int c = 1; c < v.cols; ++c) mx = std::max(mx, v.at(r, c));
            double sum = 0.0;
            for (int c = 0; c < v.cols; ++c) {
                double e = std::exp(v.at(r, c) - mx);
                v.at(r, c) = e;
                sum += e;
            }
            for (int c = 0; c < v.cols; ++c) v.at(r, c) /= sum;
        }
        return unary(std::move(v), a, [](Node& out, Node* a) {
            for (int r = 0; r < out.val.rows; ++r) {
                double dotgy = 0.0;
                for (int c = 0; c < out.val.cols; ++c) dotgy += out.grad.at(r, c) * out.val.at(r, c);
                for (int c = 0; c < out.val.cols; ++c) {
                    double y = out.val.at(r, c);
                    a->grad.at(r, c) += y * (out.grad.at(r, c) - dotgy);
                }
            }
        });
    }

    Node* l2_normalize_rows(Node* a, double eps = 1e-12) {
        Mat v = a->val;
        std::vector<double> norms(v.rows);
        for (int r = 0; r < v.rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < v.cols; ++c) s += v.at(r, c) * v.at(r, c);
            double n = std::sqrt(s);
            norms[r] = std::max(n, eps);
            for (int c = 0; c < v.cols; ++c) v.at(r, c) /= norms[r];
        }
        return unary(std::move(v), a, [norms](Node& out, Node* a) {
            for (int r = 0; r < out.val.rows; ++r) {
                double gy = 0.0;
                for (int c = 0; c < out.val.cols; ++c) gy += out.grad.at(r, c) * out.val.at(r, c);
                for (int c = 0; c < out.val.cols; ++c)
                    a->grad.at(r, c) += (out.grad.at(r, c) - gy * out.val.at(r, c)) / norms[r];
            }
        });
    }

    Node* log_floored(Node* a, double floor_val = 1e-12) {
        Mat v = a->val;
        for (auto& x : v.a) x = std::log(std::max(x, floor_val));
        return unary(std::move(v), a, [floor_val](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i) {
                double x = a->val.a[i];
                if (x > floor_val) a->grad.a[i] += out.grad.a[i] / x;
            }
        });
    }

    Node* abs(Node* a) {
        Mat v = a->val;
        for (auto& x : v.a) x = std::fabs(x);
        return unary(std::move(v), a, [](Node& out, Node* a) {
            for (size_t i = 0; i < out.grad.a.size(); ++i) {
                double x = a->val.a[i];
                if (x > 0.0) a->grad.a[i] += out.grad.a[i];
                else if (x < 0.0) a->grad.a[i] -= out.grad.a[i];
            }
        });
    }

    Node* sum(Node* a) {
        Mat v(1, 1);
        for (double x : a->val.a) v.a[0] += x;
        return unary(std::move(v), a, [](Node& out, Node* a) {
            for (size_t i = 0; i < a->grad.a.size(); ++i) a->grad.a[i] += out.grad.a[0];
        });
    }

    Node* mean_rows(Node* a) {
        Mat v(1, a->val.cols);
        for (int r = 0; r < a->val.rows; ++r)
            for (int c = 0; c < a->val.cols; ++c) v.at(0, c) += a->val.at(r, c);
        double inv = 1.0 / a->val.rows;
        for (auto& x : v.a) x *= inv;
        return unary(std::move(v), a, [inv](Node& out, Node* a) {
            for (int r = 0; r < a->grad.rows; ++r)
                for (int c = 0; c < a->grad.cols; ++c) a->grad.at(r, c) += inv * out.grad.at(0, c);
        });
    }

    Node* select_rows(Node* a, std::vector<int> idx) {
        Mat v(static_cast<int>(idx.size()), a->val.cols);
        for (size_t r = 0; r < idx.size(); ++r) v.set_row(static_cast<int>(r), a->val.row_vec(idx[r]));
        return unary(std::move(v), a, [idx](Node& out, Node* a) {
            for (size_t r = 0; r < idx.size(); ++r)
                for (int c = 0; c < out.grad.cols; ++c)
                    a->grad.at(idx[r], c) += out.grad.at(static_cast<int>(r), c);
        });
    }

    // gather single entries (r_i, c_i) into a 1xN row
    Node* gather(Node* a, std::vector<std::pair<int, int>> at) {
        Mat v(1, static_cast<int>(at.size()));
        for (size_t i = 0; i < at.size(); ++i) v.a[i] = a->val.at(at[i].first, at[i].second);
        return unary(std::move(v), a, [at](Node& out, Node* a) {
            for (size_t i = 0; i < at.size(); ++i)
                a->grad.at(at[i].first, at[i].second) += out.grad.a[i];
        });
    }

    Node* concat_rows(const std::vector<Node*>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        int cols = parts[0]->val.cols;
        int rows = 0;
        for (auto* p : parts) {
            if (p->val.cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
            rows += p->val.rows;
        }
        Mat v(rows, cols);
        int r0 = 0;
        for (auto* p : parts) {
            std::copy(p->val.a.begin(), p->val.a.end(), v.a.begin() + static_cast<size_t>(r0) * cols);
            r0 += p->val.rows;
        }
        auto n = std::make_unique<Node>();
        n->val = std::move(v);
        bool any = false;
        for (auto* p : parts) any = any || p->needs_grad;
        n->needs_grad = any;
        if (any) {
            std::vector<Node*> ps = parts;
            n->back = [ps](Node& out) {
                int r0 = 0;
                for (auto* p : ps) {
                    if (p->needs_grad) {
                        p->ensure_grad();
                        for (int r = 0; r < p->val.rows; ++r)
                            for (int c = 0; c < p->val.cols; ++c)
                                p->grad.at(r, c) += out.grad.at(r0 + r, c);
                    }
                    r0 += p->val.rows;
                }
            };
        }
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    // binary cross entropy with logits against a constant target, summed.
    // loss = sum_i softplus(l_i) - t_i * l_i, with per-element weights.
    Node* bce_logits_sum(Node* logits, Mat targets, Mat weights) {
        if (!logits->val.same_shape(targets) || !logits->val.same_shape(weights))
            throw std::invalid_argument("bce_logits_sum: shape mismatch");
        Mat v(1, 1);
        for (size_t i = 0; i < logits->val.a.size(); ++i) {
            double l = logits->val.a[i];
            v.a[0] += weights.a[i] * (softplus(l) - targets.a[i] * l);
        }
        return unary(std::move(v), logits, [targets, weights](Node& out, Node* logits) {
            double g = out.grad.a[0];
            for (size_t i = 0; i < logits->val.a.size(); ++i) {
                double l = logits->val.a[i];
                logits->grad.a[i] += g * weights.a[i] * (stable_sigmoid(l) - targets.a[i]);
            }
        });
    }

    // scaled dot-product attention; q: QxD, k: SxD, v: SxD -> QxD
    Node* attention(Node* q, Node* k, Node* v, double scale) {
        Node* logits = scale_node(matmul(q, transpose_node(k)), 1.0 / scale);
        Node* w = softmax_rows(logits);
        return matmul(w, v);
    }

    Node* transpose_node(Node* a) {
        Mat v = fgovd::transpose(a->val);
        return unary(std::move(v), a, [](Node& out, Node* a) {
            for (int r = 0; r < out.grad.rows; ++r)
                for (int c = 0; c < out.grad.cols; ++c) a->grad.at(c, r) += out.grad.at(r, c);
        });
    }

    Node* scale_node(Node* a, double s) { return scale(a, s); }

    static double softplus(double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) {
            double e = std::exp(-x);
            return 1.0 / (1.0 + e);
        }
        double e = std::exp(x);
        return e / (1.0 + e);
    }

private:
    static void check_same(Node* a, Node* b, const char* op) {
        if (!a->val.same_shape(b->val)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    template <typename F>
    Node* unary(Mat v, Node* a, F f) {
        auto n = std::make_unique<Node>();
        n->val = std::move(v);
        n->needs_grad = a->needs_grad;
        if (a->needs_grad) {
            n->back = [a, f](Node& out) {
                a->ensure_grad();
                f(out, a);
            };
        }
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    template <typename F>
    Node* unary_or_binary(Mat v, Node* a, Node* b, F f) {
        auto n = std::make_unique<Node>();
        n->val = std::move(v);
        n->needs_grad = a->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->back = [a, b, f](Node& out) {
                if (a->needs_grad) a->ensure_grad();
                if (b->needs_grad) b->ensure_grad();
                f(out, a, b);
            };
        }
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    std::vector<std::unique_ptr<Node>> nodes_;
};

} // namespace fgovd::ad
