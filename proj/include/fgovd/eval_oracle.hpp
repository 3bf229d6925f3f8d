#pragma once

// Brute-force AP oracle, kept deliberately independent of eval.hpp's
// single-pass evaluator: it sweeps every distinct score threshold, redoes
// the TP/FP decision from scratch for the retained subset, and integrates
// the precision envelope over recall. Used by tests and self-checks only.

#include <algorithm>
#include <set>
#include <vector>

#include "fgovd/eval.hpp"

namespace fgovd::eval_oracle {

struct FlatPrediction {
    double score; // s_final of the positive caption
    int ann;
    int pred;
    bool iou_ok;
    bool argmax_ok;
};

inline double oracle_average_precision(const std::vector<eval::AnnotationEval>& annotations,
                                       double iou_threshold = 0.5) {
    if (annotations.empty()) throw std::invalid_argument("oracle: no annotations");
    std::vector<FlatPrediction> flat;
    for (size_t a = 0; a < annotations.size(); ++a) {
        const auto& ann = annotations[a];
        for (size_t p = 0; p < ann.predictions.size(); ++p) {
            const auto& pred = ann.predictions[p];
            FlatPrediction f;
            f.score = pred.scores[ann.positive_index];
            f.ann = static_cast<int>(a);
            f.pred = static_cast<int>(p);
            f.iou_ok = !pred.box.degenerate() && eval::iou(pred.box, ann.gt_box) >= iou_threshold;
            int best = 0;
            for (size_t i = 1; i < pred.scores.size(); ++i)
                if (pred.scores[i] > pred.scores[best]) best = static_cast<int>(i);
            f.argmax_ok = best == ann.positive_index;
            flat.push_back(f);
        }
    }
    if (flat.empty()) return 0.0;

    // counting at one cutoff: keep predictions with score >= tau, match
    // greedily in (score desc, ann, pred) order, one TP per annotation
    auto counts_at = [&](double tau) {
        std::vector<FlatPrediction> kept;
        for (const auto& f : flat)
            if (f.score >= tau) kept.push_back(f);
        std::sort(kept.begin(), kept.end(), [](const FlatPrediction& x, const FlatPrediction& y) {
            if (x.score != y.score) return x.score > y.score;
            if (x.ann != y.ann) return x.ann < y.ann;
            return x.pred < y.pred;
        });
        std::vector<bool> taken(annotations.size(), false);
        int tp = 0, fp = 0;
        for (const auto& f : kept) {
            if (f.iou_ok && f.argmax_ok && !taken[f.ann]) {
                taken[f.ann] = true;
                ++tp;
            } else {
                ++fp;
            }
        }
        return std::pair<int, int>(tp, fp);
    };

    std::set<double, std::greater<double>> thresholds;
    for (const auto& f : flat) thresholds.insert(f.score);

    struct PrPoint {
        double recall, precision;
    };
    std::vector<PrPoint> points;
    const double total = static_cast<double>(annotations.size());
    for (double tau : thresholds) {
        auto [tp, fp] = counts_at(tau);
        points.push_back({tp / total, tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0});
    }
    // all-point interpolation: p_interp(r) = max precision at recall >= r
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
        double r = points[i].recall;
        if (r <= prev_recall) continue;
        double p_interp = 0.0;
        for (size_t j = 0; j < points.size(); ++j)
            if (points[j].recall >= r) p_interp = std::max(p_interp, points[j].precision);
        ap += (r - prev_recall) * p_interp;
        prev_recall = r;
    }
    return ap;
}

} // namespace fgovd::eval_oracle
