#pragma once

// Fine-grained attribute discrimination: pool the frozen feature map at each
// predicted box, score the pooled feature against refined full-name
// embeddings, and fuse with the detector's coarse confidence as a weighted
// geometric mean.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgovd/box.hpp"
#include "fgovd/cgod.hpp"
#include "fgovd/encoders.hpp"
#include "fgovd/llm.hpp"
#include "fgovd/tensor.hpp"

namespace fgovd::fgad {

constexpr double kScoreFloor = 1e-12;

struct RegionFeature {
    std::vector<double> vector; // unit-normalized pooled feature
    Box box;
    int cell_count = 0;
    bool degenerate = false; // pooled cells cancelled; feature unusable
};

enum class PoolMode { mean, max };

struct FusionConfig {
    double alpha = 0.6;
    double m_fine = 100.0;

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
        if (m_fine <= 0.0) throw std::invalid_argument("m_fine must be positive");
    }
};

// Cells whose centers fall inside the box are pooled (mean by default); if
// none do, the cell containing the box center is used.
inline RegionFeature pool_region(const enc::SpatialFeatureMap& map, const Box& box,
                                 PoolMode mode = PoolMode::mean) {
    if (box.degenerate()) throw std::invalid_argument("pool_region: degenerate box");
    auto [x0, y0, x1, y1] = box.corners();
    RegionFeature out;
    out.box = box;
    std::vector<double> acc(map.dim, 0.0);
    int count = 0;
    for (int r = 0; r < map.height; ++r) {
        double cy = (r + 0.5) / map.height;
        if (cy < y0 || cy > y1) continue;
        for (int c = 0; c < map.width; ++c) {
            double cx = (c + 0.5) / map.width;
            if (cx < x0 || cx > x1) continue;
            auto cell = map.cell(r, c);
            if (mode == PoolMode::mean) {
                for (int k = 0; k < map.dim; ++k) acc[k] += cell[k];
            } else {
                for (int k = 0; k < map.dim; ++k) acc[k] = count == 0 ? cell[k] : std::max(acc[k], cell[k]);
            }
            ++count;
        }
    }
    if (count == 0) {
        int r = std::min(std::max(static_cast<int>(box.cy * map.height), 0), map.height - 1);
        int c = std::min(std::max(static_cast<int>(box.cx * map.width), 0), map.width - 1);
        acc = map.cell(r, c);
        count = 1;
    }
    if (mode == PoolMode::mean)
        for (auto& x : acc) x /= count;
    out.cell_count = count;
    if (norm(acc) < 1e-12) {
        out.degenerate = true;
        out.vector.assign(map.dim, 0.0);
        return out;
    }
    out.vector = normalized(std::move(acc));
    return out;
}

// l[i] = m_fine * cos(region, refined_full_i); s = softmax(l)
inline std::pair<std::vector<double>, std::vector<double>> fine_scores(const RegionFeature& region,
                                                                       const Mat& refined_full,
                                                                       double m_fine) {
    if (refined_full.rows < 1) throw std::invalid_argument("fine_scores: empty vocabulary");
    const int n = refined_full.rows;
    std::vector<double> logits(n);
    for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int k = 0; k < refined_full.cols; ++k) d += region.vector[k] * refined_full.at(i, k);
        double l = m_fine * d;
        logits[i] = std::min(std::max(l, -cgod::kLogitClamp), cgod::kLogitClamp);
    }
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> scores(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        scores[i] = std::exp(logits[i] - mx);
        sum += scores[i];
    }
    for (auto& s : scores) s /= sum;
    return {std::move(logits), std::move(scores)};
}

// Elementwise s_coarse^alpha * s_fine^(1-alpha), computed in log space with
// s_fine floored; alpha = 1 and alpha = 0 return the argument exactly.
inline std::vector<double> fuse_scores(const std::vector<double>& s_coarse,
                                       const std::vector<double>& s_fine, double alpha) {
    if (s_coarse.size() != s_fine.size()) throw std::invalid_argument("fuse_scores: size mismatch");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fuse_scores: alpha out of range");
    std::vector<double> out(s_coarse.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double sf = std::max(s_fine[i], kScoreFloor);
        if (alpha == 1.0) out[i] = s_coarse[i];
        else if (alpha == 0.0) out[i] = sf;
        else out[i] = std::exp(alpha * std::log(s_coarse[i]) + (1.0 - alpha) * std::log(sf));
    }
    return out;
}

// supp-table alternative: weighted arithmetic mean
inline std::vector<double> fuse_scores_weighted_average(const std::vector<double>& s_coarse,
                                                        const std::vector<double>& s_fine,
                                                        double alpha) {
    if (s_coarse.size() != s_fine.size()) throw std::invalid_argument("fuse: size mismatch");
    std::vector<double> out(s_coarse.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = alpha * s_coarse[i] + (1.0 - alpha) * s_fine[i];
    return out;
}

// Attach s_fine and s_final to every prediction, pooling from the frozen
// F_conv the detector already computed. Degenerate pooling falls back to a
// uniform s_fine for that prediction.
inline void score_predictions(std::vector<cgod::Prediction>& predictions,
                              const enc::SpatialFeatureMap& f_conv, const Mat& refined_full,
                              const FusionConfig& config, PoolMode mode = PoolMode::mean) {
    config.validate();
    const int n = refined_full.rows;
    for (auto& p : predictions) {
        RegionFeature region;
        bool degenerate = false;
        try {
            region = pool_region(f_conv, p.box, mode);
            degenerate = region.degenerate;
        } catch (const std::exception&) {
            degenerate = true;
        }
        if (degenerate) {
            p.fine_logits.assign(n, 0.0);
            p.fine_scores.assign(n, 1.0 / n);
        } else {
            auto [logits, scores] = fine_scores(region, refined_full, config.m_fine);
            p.fine_logits = std::move(logits);
            p.fine_scores = std::move(scores);
        }
        p.final_scores = fuse_scores(p.coarse_scores, p.fine_scores, config.alpha);
    }
}

// ---- generative-VLM scorer (Table-3-style variant) ----

struct GenerativeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string generative_prompt(const std::string& region_key, const std::string& caption) {
    return "region: " + region_key +
           "\nDoes this image region match the attributes described in the following caption? "
           "Reply with a probability in [0,1].\ncaption: " +
           caption + "\n";
}

class GenerativeScorer {
public:
    virtual ~GenerativeScorer() = default;
    // probability that the backend answers "yes" for (region, caption)
    virtual double yes_probability(const std::string& region_key, const std::string& caption) = 0;
};

class FakeGenerativeScorer final : public GenerativeScorer {
public:
    explicit FakeGenerativeScorer(std::function<double(const std::string&, const std::string&)> fn)
        : fn_(std::move(fn)) {}
    double yes_probability(const std::string& region_key, const std::string& caption) override {
        return fn_(region_key, caption);
    }

private:
    std::function<double(const std::string&, const std::string&)> fn_;
};

// Replays recorded probabilities through the shared transcript format.
class TranscriptGenerativeScorer final : public GenerativeScorer {
public:
    explicit TranscriptGenerativeScorer(std::shared_ptr<llm::TranscriptStore> store)
        : store_(std::move(store)) {}

    double yes_probability(const std::string& region_key, const std::string& caption) override {
        std::string response = store_->take(generative_prompt(region_key, caption));
        try {
            size_t pos = 0;
            double v = std::stod(response, &pos);
            if (v < 0.0 || v > 1.0) throw GenerativeError("probability out of range: " + response);
            return v;
        } catch (const std::invalid_argument&) {
            throw GenerativeError("missing probability in response: " + response);
        }
    }

private:
    std::shared_ptr<llm::TranscriptStore> store_;
};

inline double generative_score(GenerativeScorer& backend, const std::string& region_key,
                               const std::string& caption) {
    double p = backend.yes_probability(region_key, caption);
    if (p < 0.0 || p > 1.0) throw GenerativeError("backend returned probability out of range");
    return p;
}

// Drop-in replacement for fine_scores: per-caption yes-probabilities scaled
// by m_fine and renormalized with a softmax.
inline void score_predictions_generative(std::vector<cgod::Prediction>& predictions,
                                         GenerativeScorer& backend,
                                         const std::vector<std::string>& captions,
                                         const std::string& image_key, const FusionConfig& config) {
    config.validate();
    const int n = static_cast<int>(captions.size());
    for (size_t j = 0; j < predictions.size(); ++j) {
        auto& p = predictions[j];
        std::string region_key = image_key + "#" + std::to_string(j);
        std::vector<double> logits(n);
        for (int i = 0; i < n; ++i)
            logits[i] = config.m_fine * generative_score(backend, region_key, captions[i]);
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        std::vector<double> scores(n);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            scores[i] = std::exp(logits[i] - mx);
            sum += scores[i];
        }
        for (auto& s : scores) s /= sum;
        p.fine_logits = std::move(logits);
        p.fine_scores = std::move(scores);
        p.final_scores = fuse_scores(p.coarse_scores, p.fine_scores, config.alpha);
    }
}

} // namespace fgovd::fgad
