#pragma once

// Deterministic synthetic backends. Every subject and attribute value owns a
// seeded unit direction in R^d; scenes plant subject+attribute mixtures into
// grid cells; the text encoder maps registry phrases onto the same
// directions. Composite phrases (full class names) are blended with a fixed
// mixing rotation, so frozen full-name embeddings are systematically
// misaligned with the visual directions while single-phrase embeddings stay
// clean. A linear projection can undo the mixing, which is exactly the job
// the refined text encoder is trained to do.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fgovd/encoders.hpp"
#include "fgovd/rng.hpp"
#include "fgovd/tensor.hpp"

namespace fgovd::synth {

struct WorldConfig {
    uint64_t seed = 1;
    int dim = 64;
    int grid_h = 8;
    int grid_w = 8;
    int stride = 32;
    double noise_scale = 0.25;      // norm of per-cell noise
    double attribute_weight = 0.35; // attribute direction weight inside object cells
    double distractor_weight = 0.9; // attribute-patch strength (no subject present)
    double entanglement = 0.6;      // mixing strength on composite text embeddings
    std::vector<std::string> subjects = {"chair", "table", "lamp", "cup", "sofa", "clock"};
    std::map<std::string, std::vector<std::string>> attribute_types = {
        {"color", {"red", "blue", "green", "yellow"}},
        {"material", {"wooden", "metal", "plastic", "glass"}},
        {"pattern", {"striped", "spotted", "plain", "checkered"}},
    };

    std::vector<std::string> type_names() const {
        std::vector<std::string> out;
        for (auto& [k, _] : attribute_types) out.push_back(k);
        return out;
    }
};

inline std::vector<double> seeded_unit_direction(uint64_t world_seed, const std::string& phrase, int dim) {
    Rng rng(derive_seed(world_seed, "dir:" + vocab::lowercase(phrase)));
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.gaussian();
    return normalized(std::move(v));
}

// Fixed random orthogonal matrix (Gram-Schmidt on a seeded gaussian).
inline Mat mixing_rotation(uint64_t world_seed, int dim) {
    Rng rng(derive_seed(world_seed, "mixing-rotation"));
    Mat m = Mat::gaussian(dim, dim, rng);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < i; ++j) {
            double proj = 0.0;
            for (int k = 0; k < dim; ++k) proj += m.at(i, k) * m.at(j, k);
            for (int k = 0; k < dim; ++k) m.at(i, k) -= proj * m.at(j, k);
        }
        double n = 0.0;
        for (int k = 0; k < dim; ++k) n += m.at(i, k) * m.at(i, k);
        n = std::sqrt(std::max(n, 1e-12));
        for (int k = 0; k < dim; ++k) m.at(i, k) /= n;
    }
    return m;
}

class DirectionRegistry {
public:
    explicit DirectionRegistry(const WorldConfig& config) : config_(config) {
        for (auto& s : config.subjects) add_phrase(s);
        for (auto& [type, values] : config.attribute_types)
            for (auto& v : values) add_phrase(v);
        mixing_ = mixing_rotation(config.seed, config.dim);
    }

    const WorldConfig& config() const { return config_; }

    std::vector<double> direction(const std::string& phrase) const {
        return seeded_unit_direction(config_.seed, phrase, config_.dim);
    }

    const Mat& mixing() const { return mixing_; }

    // Greedy longest-phrase matching over lowercased tokens.
    std::vector<std::string> match_phrases(const std::string& text) const {
        std::vector<std::string> toks;
        for (auto& t : vocab::tokenize(text)) toks.push_back(vocab::lowercase(t));
        std::vector<std::string> hits;
        size_t i = 0;
        while (i < toks.size()) {
            size_t best_len = 0;
            std::string best;
            auto it = by_first_word_.find(toks[i]);
            if (it != by_first_word_.end()) {
                for (const auto& phrase_toks : it->second) {
                    if (phrase_toks.size() > toks.size() - i) continue;
                    bool match = true;
                    for (size_t k = 0; k < phrase_toks.size(); ++k)
                        if (phrase_toks[k] != toks[i + k]) { match = false; break; }
                    if (match && phrase_toks.size() > best_len) {
                        best_len = phrase_toks.size();
                        best = vocab::join(phrase_toks, 0, phrase_toks.size());
                    }
                }
            }
            if (best_len > 0) {
                hits.push_back(best);
                i += best_len;
            } else {
                ++i;
            }
        }
        return hits;
    }

    // Clean composite: normalized sum of planted directions (what the oracle
    // scorer uses; no mixing applied).
    std::vector<double> clean_composite(const std::vector<std::string>& phrases) const {
        std::vector<double> sum(config_.dim, 0.0);
        for (auto& p : phrases) sum = axpy(1.0, direction(p), std::move(sum));
        return normalized(std::move(sum));
    }

private:
    void add_phrase(const std::string& phrase) {
        std::vector<std::string> toks;
        for (auto& t : vocab::tokenize(phrase)) toks.push_back(vocab::lowercase(t));
        if (toks.empty()) return;
        by_first_word_[toks[0]].push_back(toks);
    }

    WorldConfig config_;
    Mat mixing_;
    std::map<std::string, std::vector<std::vector<std::string>>> by_first_word_;
};

class SyntheticTextEncoder final : public enc::TextEncoder {
public:
    explicit SyntheticTextEncoder(std::shared_ptr<const DirectionRegistry> registry)
        : registry_(std::move(registry)) {}

    enc::EmbeddingVector encode(const std::string& text) const override {
        const auto& cfg = registry_->config();
        auto hits = registry_->match_phrases(text);
        if (hits.size() <= 1) {
            const std::string key = hits.empty() ? vocab::lowercase(text) : hits[0];
            return enc::make_unit(registry_->direction(key));
        }
        std::vector<double> raw(cfg.dim, 0.0);
        for (auto& h : hits) raw = axpy(1.0, registry_->direction(h), std::move(raw));
        // composite phrases drift: blend toward a fixed rotation of the sum
        std::vector<double> mixed(cfg.dim, 0.0);
        const Mat& m = registry_->mixing();
        for (int i = 0; i < cfg.dim; ++i) {
            double s = 0.0;
            for (int j = 0; j < cfg.dim; ++j) s += m.at(i, j) * raw[j];
            mixed[i] = s;
        }
        std::vector<double> out(cfg.dim);
        for (int i = 0; i < cfg.dim; ++i)
            out[i] = (1.0 - cfg.entanglement) * raw[i] + cfg.entanglement * mixed[i];
        return enc::make_unit(std::move(out));
    }

    int dim() const override { return registry_->config().dim; }
    std::string id() const override { return "synthetic"; }

private:
    std::shared_ptr<const DirectionRegistry> registry_;
};

// ---- scenes ----

struct SceneObject {
    std::string subject;
    std::vector<std::string> attribute_values; // one per attribute type, in type order
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0; // inclusive cell rect

    // center-size box in [0,1]^4
    std::array<double, 4> box(int grid_h, int grid_w) const {
        double x0 = static_cast<double>(col0) / grid_w;
        double x1 = static_cast<double>(col1 + 1) / grid_w;
        double y0 = static_cast<double>(row0) / grid_h;
        double y1 = static_cast<double>(row1 + 1) / grid_h;
        return {(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
    }
};

// attribute patch: attribute directions with no subject (background texture)
struct SceneDistractor {
    std::vector<std::string> attribute_values;
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
};

struct SceneSpec {
    int image_id = 0;
    uint64_t noise_seed = 0;
    std::vector<SceneObject> objects;
    std::vector<SceneDistractor> distractors;
};

inline std::string caption_for(const SceneObject& obj) {
    std::string s = "a";
    for (auto& v : obj.attribute_values) s += " " + v;
    return s + " " + obj.subject;
}

inline std::string caption_for(const std::string& subject, const std::vector<std::string>& values) {
    std::string s = "a";
    for (auto& v : values) s += " " + v;
    return s + " " + subject;
}

class SyntheticImageEncoder {
public:
    explicit SyntheticImageEncoder(std::shared_ptr<const DirectionRegistry> registry)
        : registry_(std::move(registry)) {}

    enc::SpatialFeatureMap encode(const SceneSpec& scene) const {
        const auto& cfg = registry_->config();
        if (cfg.grid_h < 1 || cfg.grid_w < 1)
            throw std::invalid_argument("encode: grid smaller than one stride");
        enc::SpatialFeatureMap map;
        map.height = cfg.grid_h;
        map.width = cfg.grid_w;
        map.dim = cfg.dim;
        map.stride = cfg.stride;
        map.image_height = cfg.grid_h * cfg.stride;
        map.image_width = cfg.grid_w * cfg.stride;
        map.features = Mat(map.cells(), cfg.dim);

        for (int r = 0; r < cfg.grid_h; ++r) {
            for (int c = 0; c < cfg.grid_w; ++c) {
                Rng rng(derive_seed(scene.noise_seed, static_cast<uint64_t>(r) * cfg.grid_w + c));
                std::vector<double> v(cfg.dim);
                for (auto& x : v) x = rng.gaussian();
                v = normalized(std::move(v));
                for (auto& x : v) x *= cfg.noise_scale;
                map.features.set_row(map.cell_index(r, c), v);
            }
        }
        for (const auto& obj : scene.objects) {
            std::vector<double> mix = registry_->direction(obj.subject);
            for (auto& val : obj.attribute_values)
                mix = axpy(cfg.attribute_weight, registry_->direction(val), std::move(mix));
            stamp(map, obj.row0, obj.col0, obj.row1, obj.col1, mix);
        }
        for (const auto& dis : scene.distractors) {
            std::vector<double> mix(cfg.dim, 0.0);
            for (auto& val : dis.attribute_values)
                mix = axpy(cfg.distractor_weight, registry_->direction(val), std::move(mix));
            stamp(map, dis.row0, dis.col0, dis.row1, dis.col1, mix);
        }
        return map;
    }

private:
    static void stamp(enc::SpatialFeatureMap& map, int r0, int c0, int r1, int c1,
                      const std::vector<double>& mix) {
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                int idx = map.cell_index(r, c);
                for (int k = 0; k < map.dim; ++k) map.features.at(idx, k) += mix[k];
            }
        }
    }

    std::shared_ptr<const DirectionRegistry> registry_;
};

// ---- feature-map file (file-based image backend) ----

inline void save_feature_map(const std::string& path, const enc::SpatialFeatureMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write feature map: " + path);
    out << "FGMAP1\n"
        << map.height << " " << map.width << " " << map.dim << " " << map.stride << " "
        << map.image_height << " " << map.image_width << "\n";
    for (double v : map.features.a) enc::detail::write_f32_le(out, static_cast<float>(v));
}

inline enc::SpatialFeatureMap load_feature_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open feature map: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "FGMAP1") throw std::runtime_error("bad feature map magic: " + path);
    enc::SpatialFeatureMap map;
    in >> map.height >> map.width >> map.dim >> map.stride >> map.image_height >> map.image_width;
    in.ignore(1);
    map.features = Mat(map.cells(), map.dim);
    for (auto& v : map.features.a) v = enc::detail::read_f32_le(in);
    if (!in) throw std::runtime_error("truncated feature map: " + path);
    return map;
}

} // namespace fgovd::synth
