#pragma once

// Two-stage training. Stage 1: detector on coarse subject labels with
// bipartite matching, BCE classification and L1 box losses. Stage 2: adds
// the binary fine loss over fused scores and unfreezes the projection head.
// Optimizer is plain fixed-step SGD; runs are bit-reproducible per seed.

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgovd/cgod.hpp"
#include "fgovd/fgad.hpp"
#include "fgovd/rng.hpp"

namespace fgovd::train {

struct TrainSample {
    Mat f_conv;                      // (H*W) x d feature map
    std::vector<Box> gt_boxes;
    std::vector<int> gt_subject_ids; // into the coarse vocabulary
    std::vector<int> gt_fine_ids;    // into the fine vocabulary (stage 2)
    bool has_fine = false;           // false for co-trained coarse samples
};

struct LossWeights {
    double classification = 1.0;
    double box = 5.0;
    double fine = 1.0;
    double background = 0.1; // down-weight on unmatched predictions' BCE
};

struct TrainConfig {
    int stage = 1;
    int iterations = 500;
    double learning_rate = 3e-4;
    LossWeights weights;
    double alpha = 0.6;
    double m_fine = 100.0;
    uint64_t seed = 1;
    bool co_train = false;
    double match_lambda = 5.0;       // box term weight inside the matching cost
    double divergence_threshold = 1e4;

    void validate() const {
        if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
        if (stage == 1 && weights.fine != 0.0)
            throw std::invalid_argument("stage-1 config must have fine-loss weight 0");
    }
};

struct TrainDataset {
    Mat subjects;                     // coarse vocabulary embeddings (n x d)
    std::vector<Mat> class_attributes;// per coarse class, for AEF
    Mat raw_full;                     // fine vocabulary raw embeddings (stage 2)
    std::vector<TrainSample> samples;
};

struct IterationLog {
    int iteration = 0;
    double total = 0.0;
    double classification = 0.0;
    double box = 0.0;
    double fine = 0.0;
};

struct TrainResult {
    std::vector<IterationLog> logs;
    bool diverged = false;
    std::string divergence_message;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- bipartite matching ----

// Min-cost assignment of every row to a distinct column (rows <= cols).
// Returns, per row, the assigned column. O(rows^2 * cols).
inline std::vector<int> hungarian(const Mat& cost) {
    const int n = cost.rows, m = cost.cols;
    if (n > m) throw std::invalid_argument("hungarian: more rows than columns");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

inline double box_l1(const Box& a, const Box& b) {
    return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) +
           std::fabs(a.h - b.h);
}

struct Assignment {
    std::vector<int> gt_of_prediction; // -1 for background
    std::vector<int> prediction_of_gt;
    double total_cost = 0.0;
};

// cost = -log s_coarse[gt class] + lambda * L1(box, gt box)
inline Assignment match_predictions(const std::vector<cgod::Prediction>& predictions,
                                    const std::vector<Box>& gt_boxes,
                                    const std::vector<int>& gt_subject_ids, double lambda = 5.0) {
    if (predictions.empty()) throw std::invalid_argument("match_predictions: no predictions");
    if (gt_boxes.size() != gt_subject_ids.size())
        throw std::invalid_argument("match_predictions: gt arrays disagree");
    if (gt_boxes.size() > predictions.size())
        throw std::invalid_argument("match_predictions: more ground truths than predictions");
    Assignment out;
    out.gt_of_prediction.assign(predictions.size(), -1);
    out.prediction_of_gt.assign(gt_boxes.size(), -1);
    if (gt_boxes.empty()) return out;
    Mat cost(static_cast<int>(gt_boxes.size()), static_cast<int>(predictions.size()));
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
        for (size_t j = 0; j < predictions.size(); ++j) {
            double s = std::max(predictions[j].coarse_scores[gt_subject_ids[g]], 1e-12);
            cost.at(static_cast<int>(g), static_cast<int>(j)) =
                -std::log(s) + lambda * box_l1(predictions[j].box, gt_boxes[g]);
        }
    }
    auto row_to_col = hungarian(cost);
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
        out.prediction_of_gt[g] = row_to_col[g];
        out.gt_of_prediction[row_to_col[g]] = static_cast<int>(g);
        out.total_cost += cost.at(static_cast<int>(g), row_to_col[g]);
    }
    return out;
}

// ---- losses ----

// L = -sum_j (alpha log s_coarse[gt] + (1-alpha) log s_fine[gt]); both
// factors floored at 1e-12, identical to -sum log(fused score) in log space.
inline double fine_loss(const std::vector<std::vector<double>>& s_coarse,
                        const std::vector<std::vector<double>>& s_fine,
                        const std::vector<int>& gt_fine_ids, double alpha) {
    if (s_coarse.size() != s_fine.size() || s_coarse.size() != gt_fine_ids.size())
        throw std::invalid_argument("fine_loss: size mismatch");
    double loss = 0.0;
    for (size_t j = 0; j < gt_fine_ids.size(); ++j) {
        double sc = std::max(s_coarse[j][gt_fine_ids[j]], fgad::kScoreFloor);
        double sf = std::max(s_fine[j][gt_fine_ids[j]], fgad::kScoreFloor);
        loss -= alpha * std::log(sc) + (1.0 - alpha) * std::log(sf);
    }
    return loss;
}

struct DetectionLossNodes {
    ad::Node* total = nullptr;
    ad::Node* classification = nullptr;
    ad::Node* box = nullptr;
};

// BCE on coarse logits (matched class target 1, background all-zeros,
// background rows down-weighted) plus L1 on matched boxes.
inline DetectionLossNodes build_detection_loss(ad::Graph& g, const cgod::TailOutputs& tail,
                                               const Assignment& assign,
                                               const std::vector<Box>& gt_boxes,
                                               const std::vector<int>& gt_subject_ids,
                                               const LossWeights& weights) {
    const int k = tail.coarse_logits->val.rows;
    const int n = tail.coarse_logits->val.cols;
    Mat targets(k, n), bce_weights(k, n);
    for (int j = 0; j < k; ++j) {
        int gt = assign.gt_of_prediction[j];
        double w = gt >= 0 ? 1.0 : weights.background;
        for (int c = 0; c < n; ++c) bce_weights.at(j, c) = w / k;
        if (gt >= 0) targets.at(j, gt_subject_ids[gt]) = 1.0;
    }
    DetectionLossNodes out;
    out.classification = g.bce_logits_sum(tail.coarse_logits, targets, bce_weights);

    const int matched = static_cast<int>(gt_boxes.size());
    if (matched > 0) {
        std::vector<int> pred_rows;
        Mat gt(matched, 4);
        for (int gi = 0; gi < matched; ++gi) {
            pred_rows.push_back(assign.prediction_of_gt[gi]);
            auto arr = gt_boxes[gi].to_array();
            for (int c = 0; c < 4; ++c) gt.at(gi, c) = arr[c];
        }
        ad::Node* matched_boxes = g.select_rows(tail.boxes, pred_rows);
        ad::Node* l1 = g.sum(g.abs(g.sub(matched_boxes, g.constant(gt))));
        out.box = g.scale(l1, 1.0 / matched);
    } else {
        out.box = g.constant(Mat(1, 1));
    }
    out.total = g.add(g.scale(out.classification, weights.classification),
                      g.scale(out.box, weights.box));
    return out;
}

struct FineLossNodes {
    ad::Node* total = nullptr;      // scalar, already divided by #matched
    ad::Node* fine_probs = nullptr; // J x n_fine softmax rows
};

// Graph version of the fine loss for matched predictions. Pooled region
// features are constants (the feature map is frozen); gradients flow into
// the projection head through the refined embeddings and into the detector
// through the coarse scores.
inline FineLossNodes build_fine_loss(ad::Graph& g, const cgod::TailOutputs& tail,
                                     ad::Node* refined_full, const Mat& pooled_units,
                                     const std::vector<int>& matched_pred_rows,
                                     const std::vector<int>& gt_subject_ids_of_matched,
                                     const std::vector<int>& gt_fine_ids, double alpha,
                                     double m_fine) {
    const int J = static_cast<int>(matched_pred_rows.size());
    if (J == 0) return {g.constant(Mat(1, 1)), nullptr};
    ad::Node* cos = g.matmul(g.constant(pooled_units), g.transpose_node(refined_full));
    ad::Node* logits = g.clamp(g.scale(cos, m_fine), -cgod::kLogitClamp, cgod::kLogitClamp);
    ad::Node* probs = g.softmax_rows(logits);

    std::vector<std::pair<int, int>> fine_at, coarse_at;
    for (int j = 0; j < J; ++j) {
        fine_at.push_back({j, gt_fine_ids[j]});
        coarse_at.push_back({matched_pred_rows[j], gt_subject_ids_of_matched[j]});
    }
    ad::Node* log_fine = g.log_floored(g.gather(probs, fine_at), fgad::kScoreFloor);
    ad::Node* log_coarse = g.log_floored(g.gather(tail.coarse_scores, coarse_at), fgad::kScoreFloor);
    ad::Node* sum = g.add(g.scale(g.sum(log_coarse), alpha), g.scale(g.sum(log_fine), 1.0 - alpha));
    FineLossNodes out;
    out.total = g.scale(sum, -1.0 / J);
    out.fine_probs = probs;
    return out;
}

// ---- projection head binding ----

struct HeadNodes {
    ad::Node* weight = nullptr;
    ad::Node* bias = nullptr;
};

inline HeadNodes bind_head(ad::Graph& g, enc::ProjectionHead& head, bool trainable) {
    return {g.leaf(head.weight, trainable), g.leaf(head.bias, trainable)};
}

inline ad::Node* build_refined_full(ad::Graph& g, const HeadNodes& head, const Mat& raw_full) {
    ad::Node* projected = g.add_rowvec(g.matmul(g.constant(raw_full), g.transpose_node(head.weight)),
                                       head.bias);
    return g.l2_normalize_rows(projected);
}

// ---- the training loop ----

class Trainer {
public:
    Trainer(cgod::DetectorModel& model, enc::ProjectionHead& head, const TrainDataset& data,
            const TrainConfig& config)
        : model_(model), head_(head), data_(data), config_(config) {
        config_.validate();
        if (data_.samples.empty()) throw std::invalid_argument("train: empty dataset");
    }

    TrainResult run() {
        TrainResult result;
        Rng order_rng(derive_seed(config_.seed, "sample-order"));
        std::vector<int> order;
        for (int it = 0; it < config_.iterations; ++it) {
            if (order.empty()) {
                order.resize(data_.samples.size());
                for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
                order_rng.shuffle(order);
            }
            int sample_idx = order.back();
            order.pop_back();
            IterationLog log = step(it, data_.samples[sample_idx]);
            if (!std::isfinite(log.total) || log.total > config_.divergence_threshold) {
                result.diverged = true;
                result.divergence_message = "loss " + std::to_string(log.total) + " at iteration " +
                                            std::to_string(it);
                result.logs.push_back(log);
                throw DivergenceError(result.divergence_message);
            }
            result.logs.push_back(log);
        }
        return result;
    }

private:
    using DetectorModel = cgod::DetectorModel;

    IterationLog step(int iteration, const TrainSample& sample) {
        ad::Graph g;
        cgod::DetectorNodes det = cgod::bind_detector(g, model_, true);
        const bool train_head = config_.stage == 2 && head_.trainable;
        HeadNodes head_nodes = bind_head(g, head_, train_head);

        ad::Node* f_conv = g.constant(sample.f_conv);
        ad::Node* f_enc = cgod::build_f_enc(g, det, f_conv);
        Mat sel_logits = cgod::classify(data_.subjects, f_enc->val, 1.0);
        auto selection = cgod::select_topk(sel_logits, f_enc->val, model_.config.top_k,
                                           model_.config.grid_w);
        cgod::TailOutputs tail =
            cgod::build_tail(g, det, f_enc, selection, data_.subjects, data_.class_attributes);

        std::vector<cgod::Prediction> preds(selection.size());
        for (size_t j = 0; j < selection.size(); ++j) {
            preds[j].box = Box{tail.boxes->val.at(static_cast<int>(j), 0),
                               tail.boxes->val.at(static_cast<int>(j), 1),
                               tail.boxes->val.at(static_cast<int>(j), 2),
                               tail.boxes->val.at(static_cast<int>(j), 3)};
            preds[j].coarse_scores = tail.coarse_scores->val.row_vec(static_cast<int>(j));
        }
        Assignment assign =
            match_predictions(preds, sample.gt_boxes, sample.gt_subject_ids, config_.match_lambda);

        DetectionLossNodes det_loss = build_detection_loss(g, tail, assign, sample.gt_boxes,
                                                           sample.gt_subject_ids, config_.weights);
        ad::Node* total = det_loss.total;
        ad::Node* fine_total = nullptr;
        if (config_.stage == 2 && sample.has_fine && config_.weights.fine > 0.0 &&
            !sample.gt_boxes.empty()) {
            ad::Node* refined = build_refined_full(g, head_nodes, data_.raw_full);
            std::vector<int> matched_rows, subj_ids, fine_ids;
            Mat pooled(static_cast<int>(sample.gt_boxes.size()), model_.config.dim);
            int J = 0;
            enc::SpatialFeatureMap map = wrap_map(sample.f_conv);
            for (size_t gi = 0; gi < sample.gt_boxes.size(); ++gi) {
                int pj = assign.prediction_of_gt[gi];
                fgad::RegionFeature region = fgad::pool_region(map, preds[pj].box);
                if (region.degenerate) continue;
                pooled.set_row(J, region.vector);
                matched_rows.push_back(pj);
                subj_ids.push_back(sample.gt_subject_ids[gi]);
                fine_ids.push_back(sample.gt_fine_ids[gi]);
                ++J;
            }
            Mat pooled_used(J, model_.config.dim);
            for (int j = 0; j < J; ++j) pooled_used.set_row(j, pooled.row_vec(j));
            if (J > 0) {
                FineLossNodes f = build_fine_loss(g, tail, refined, pooled_used, matched_rows,
                                                  subj_ids, fine_ids, config_.alpha, config_.m_fine);
                fine_total = f.total;
                total = g.add(total, g.scale(f.total, config_.weights.fine));
            }
        }

        g.backward(total);
        apply_sgd(det, head_nodes, train_head);

        IterationLog log;
        log.iteration = iteration;
        log.total = total->val.a[0];
        log.classification = det_loss.classification->val.a[0];
        log.box = det_loss.box->val.a[0];
        log.fine = fine_total ? fine_total->val.a[0] : 0.0;
        return log;
    }

    enc::SpatialFeatureMap wrap_map(const Mat& f_conv) const {
        enc::SpatialFeatureMap map;
        map.height = model_.config.grid_h;
        map.width = model_.config.grid_w;
        map.dim = model_.config.dim;
        map.stride = 32;
        map.image_height = map.height * map.stride;
        map.image_width = map.width * map.stride;
        map.features = f_conv;
        return map;
    }

    void apply_sgd(const cgod::DetectorNodes& det, const HeadNodes& head_nodes, bool train_head) {
        auto leaves = cgod::bound_leaves(det);
        auto params = model_.named_params();
        for (size_t i = 0; i < params.size(); ++i) {
            if (!leaves[i]->needs_grad || leaves[i]->grad.a.empty()) continue;
            Mat& m = *params[i].second;
            for (size_t x = 0; x < m.a.size(); ++x)
                m.a[x] -= config_.learning_rate * leaves[i]->grad.a[x];
        }
        if (train_head && head_nodes.weight->needs_grad && !head_nodes.weight->grad.a.empty()) {
            for (size_t x = 0; x < head_.weight.a.size(); ++x)
                head_.weight.a[x] -= config_.learning_rate * head_nodes.weight->grad.a[x];
            for (size_t x = 0; x < head_.bias.a.size(); ++x)
                head_.bias.a[x] -= config_.learning_rate * head_nodes.bias->grad.a[x];
        }
    }

    cgod::DetectorModel& model_;
    enc::ProjectionHead& head_;
    const TrainDataset& data_;
    TrainConfig config_;
};

inline TrainResult train_stage1(cgod::DetectorModel& model, enc::ProjectionHead& head,
                                const TrainDataset& data, const TrainConfig& config) {
    if (config.stage != 1) throw std::invalid_argument("train_stage1: config.stage must be 1");
    return Trainer(model, head, data, config).run();
}

inline TrainResult train_stage2(cgod::DetectorModel& model, enc::ProjectionHead& head,
                                const TrainDataset& data, const TrainConfig& config) {
    if (config.stage != 2) throw std::invalid_argument("train_stage2: config.stage must be 2");
    return Trainer(model, head, data, config).run();
}

} // namespace fgovd::train
