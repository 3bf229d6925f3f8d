#pragma once

// FG-OVD-style evaluation. Each annotation is a gt box with a positive
// caption and hard negatives; a prediction is a true positive iff its box
// overlaps the gt at the IoU threshold AND the argmax of its fused scores is
// the positive caption. AP uses all-point interpolation over the ranking by
// the positive caption's fused score. Also houses the hard-negative
// generator and the seeded synthetic benchmark.

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgovd/box.hpp"
#include "fgovd/fgad.hpp"
#include "fgovd/rng.hpp"
#include "fgovd/synthetic.hpp"
#include "fgovd/vocabulary.hpp"

namespace fgovd::eval {

inline double iou(const Box& a, const Box& b) {
    if (a.degenerate() || b.degenerate()) throw std::invalid_argument("iou: degenerate box");
    auto [ax0, ay0, ax1, ay1] = a.corners();
    auto [bx0, by0, bx1, by1] = b.corners();
    double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    double inter = ix * iy;
    double uni = a.w * a.h + b.w * b.h - inter;
    return inter / uni;
}

struct AnnotationRecord {
    int image_id = 0;
    int object_index = 0;
    Box gt_box;
    vocab::FineGrainedClass positive;
    std::vector<vocab::FineGrainedClass> negatives; // share the subject, differ in >= 1 attribute
};

struct TrackSpec {
    std::string name;
    int negatives_per_annotation = 10;
    int attributes_substituted = 1;   // 1..3; hardness decreases as this grows
    std::string attribute_type;       // restrict substitutions to one type ("" = any)
};

inline std::vector<TrackSpec> default_tracks() {
    return {
        {"Hard", 10, 1, ""},    {"Medium", 10, 2, ""}, {"Easy", 10, 3, ""},
        {"Trivial", 5, 3, ""},  {"Color", 10, 1, "color"},
        {"Material", 10, 1, "material"}, {"Pattern", 10, 1, "pattern"},
    };
}

struct APResult {
    std::map<std::string, double> per_track;
    double average = 0.0;
    int annotations = 0;
    int predictions = 0;
};

// ---- track evaluation ----

struct EvalPrediction {
    Box box;
    std::vector<double> scores; // s_final over the annotation's caption list
};

struct AnnotationEval {
    Box gt_box;
    int positive_index = 0;
    std::vector<EvalPrediction> predictions;
};

inline int argmax_index(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

// All-point-interpolated AP at a single IoU threshold. Duplicate detections
// of one gt: only the best-ranked one counts, the rest are false positives.
inline double evaluate_track(const std::vector<AnnotationEval>& annotations,
                             double iou_threshold = 0.5) {
    if (annotations.empty()) throw std::invalid_argument("evaluate_track: no annotations");
    struct Entry {
        double score;
        int ann;
        int pred;
        bool candidate_tp; // IoU and argmax both pass
    };
    std::vector<Entry> entries;
    for (size_t a = 0; a < annotations.size(); ++a) {
        const auto& ann = annotations[a];
        for (size_t p = 0; p < ann.predictions.size(); ++p) {
            const auto& pred = ann.predictions[p];
            bool ok = !pred.box.degenerate() && iou(pred.box, ann.gt_box) >= iou_threshold &&
                      argmax_index(pred.scores) == ann.positive_index;
            entries.push_back({pred.scores[ann.positive_index], static_cast<int>(a),
                               static_cast<int>(p), ok});
        }
    }
    if (entries.empty()) return 0.0;
    std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
        if (x.score != y.score) return x.score > y.score;
        if (x.ann != y.ann) return x.ann < y.ann;
        return x.pred < y.pred;
    });
    const int total_positives = static_cast<int>(annotations.size());
    std::vector<bool> gt_taken(annotations.size(), false);
    std::vector<double> precisions, recalls;
    int tp = 0, fp = 0;
    for (const auto& e : entries) {
        if (e.candidate_tp && !gt_taken[e.ann]) {
            gt_taken[e.ann] = true;
            ++tp;
        } else {
            ++fp;
        }
        precisions.push_back(static_cast<double>(tp) / (tp + fp));
        recalls.push_back(static_cast<double>(tp) / total_positives);
    }
    // precision envelope from the right, then sum rectangle areas
    for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i)
        precisions[i] = std::max(precisions[i], precisions[i + 1]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < precisions.size(); ++i) {
        if (recalls[i] > prev_recall) {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    return ap;
}

// COCO-style 0.5:0.95 sweep, behind a flag; the default protocol is 0.5.
inline double evaluate_track_sweep(const std::vector<AnnotationEval>& annotations) {
    double sum = 0.0;
    int count = 0;
    for (double t = 0.5; t < 0.951; t += 0.05) {
        sum += evaluate_track(annotations, t);
        ++count;
    }
    return sum / count;
}

// ---- hard negatives ----

using AttributePools = std::map<std::string, std::vector<std::string>>;

struct NegativeSet {
    std::vector<vocab::FineGrainedClass> negatives;
    bool truncated = false; // pools too small for the requested count
};

inline std::string type_of_value(const AttributePools& pools, const std::string& value) {
    for (const auto& [type, values] : pools)
        if (std::find(values.begin(), values.end(), value) != values.end()) return type;
    throw std::invalid_argument("attribute value not covered by any pool: " + value);
}

inline std::string replace_first(std::string text, const std::string& from, const std::string& to) {
    auto pos = text.find(from);
    if (pos != std::string::npos) text.replace(pos, from.size(), to);
    return text;
}

// Each negative replaces exactly `substitutions` attribute slots with
// distinct same-type alternatives; the subject and sentence structure are
// untouched. Deterministic under the seed. Returns fewer than `count` (with
// truncated = true) when the pools cannot produce enough distinct negatives.
inline NegativeSet generate_negatives(const vocab::FineGrainedClass& positive, int substitutions,
                                      const AttributePools& pools, int count, uint64_t seed,
                                      const std::string& restrict_type = "") {
    if (substitutions < 1) throw std::invalid_argument("generate_negatives: substitutions < 1");
    std::vector<int> eligible_slots;
    for (size_t s = 0; s < positive.attributes.size(); ++s) {
        std::string type = type_of_value(pools, positive.attributes[s]);
        if (restrict_type.empty() || type == restrict_type) eligible_slots.push_back(static_cast<int>(s));
    }
    if (static_cast<int>(eligible_slots.size()) < substitutions)
        throw std::invalid_argument("generate_negatives: positive has too few eligible attributes");

    // enumerate slot subsets of the requested size, then value combinations
    std::vector<std::vector<int>> subsets;
    std::vector<int> current;
    std::function<void(size_t)> rec = [&](size_t from) {
        if (static_cast<int>(current.size()) == substitutions) {
            subsets.push_back(current);
            return;
        }
        for (size_t i = from; i < eligible_slots.size(); ++i) {
            current.push_back(eligible_slots[i]);
            rec(i + 1);
            current.pop_back();
        }
    };
    rec(0);

    std::vector<vocab::FineGrainedClass> all;
    std::set<std::string> seen;
    for (const auto& subset : subsets) {
        std::vector<std::vector<std::string>> alternatives;
        for (int slot : subset) {
            std::string type = type_of_value(pools, positive.attributes[slot]);
            std::vector<std::string> alts;
            for (const auto& v : pools.at(type))
                if (v != positive.attributes[slot]) alts.push_back(v);
            alternatives.push_back(std::move(alts));
        }
        std::vector<size_t> idx(subset.size(), 0);
        while (true) {
            vocab::FineGrainedClass neg = positive;
            for (size_t i = 0; i < subset.size(); ++i) {
                const std::string& from = positive.attributes[subset[i]];
                const std::string& to = alternatives[i][idx[i]];
                neg.attributes[subset[i]] = to;
                neg.full_name = replace_first(neg.full_name, from, to);
            }
            if (neg.full_name != positive.full_name && !seen.count(neg.full_name)) {
                seen.insert(neg.full_name);
                all.push_back(std::move(neg));
            }
            // odometer over value choices
            size_t d = 0;
            while (d < idx.size()) {
                if (++idx[d] < alternatives[d].size()) break;
                idx[d] = 0;
                ++d;
            }
            if (d == idx.size()) break;
        }
    }
    Rng rng(seed);
    rng.shuffle(all);
    NegativeSet out;
    for (auto& n : all) {
        if (static_cast<int>(out.negatives.size()) == count) break;
        out.negatives.push_back(std::move(n));
    }
    out.truncated = static_cast<int>(out.negatives.size()) < count;
    return out;
}

// ---- synthetic benchmark ----

struct BenchmarkConfig {
    synth::WorldConfig world;
    uint64_t dataset_seed = 11;
    int images = 320;
    int min_objects = 1;
    int max_objects = 3;
    int min_extent = 2; // object side, in cells
    int max_extent = 4;
    double same_subject_pair_prob = 0.6;
    double distractor_prob = 0.5;
    std::vector<TrackSpec> tracks = default_tracks();
};

struct SyntheticDataset {
    BenchmarkConfig config;
    std::vector<synth::SceneSpec> scenes;
    std::vector<vocab::FineGrainedClass> vocabulary; // distinct fine classes, id = index
    std::map<std::string, std::vector<AnnotationRecord>> annotations; // per track
};

inline vocab::FineGrainedClass class_for_object(const synth::SceneObject& obj, int class_id = -1) {
    vocab::FineGrainedClass c;
    c.class_id = class_id;
    c.full_name = synth::caption_for(obj);
    c.subject = obj.subject;
    c.attributes = obj.attribute_values;
    return c;
}

// Objects are planted as subject+attribute mixtures (see synth module);
// annotations carry template captions plus per-track hard negatives. Scenes
// that cannot place an object after a bounded number of retries simply get
// fewer objects.
inline SyntheticDataset generate_synthetic_benchmark(const BenchmarkConfig& config) {
    if (config.world.subjects.size() < 2)
        throw std::invalid_argument("benchmark needs at least 2 subjects");
    for (const auto& [type, values] : config.world.attribute_types)
        if (values.size() < 2)
            throw std::invalid_argument("attribute type needs at least 2 values: " + type);

    SyntheticDataset ds;
    ds.config = config;
    const auto& w = config.world;
    const auto types = w.type_names();
    std::map<std::string, int> class_ids;

    auto intern_class = [&](const synth::SceneObject& obj) {
        std::string caption = synth::caption_for(obj);
        auto it = class_ids.find(caption);
        if (it != class_ids.end()) return it->second;
        int id = static_cast<int>(ds.vocabulary.size());
        class_ids[caption] = id;
        ds.vocabulary.push_back(class_for_object(obj, id));
        return id;
    };

    for (int img = 0; img < config.images; ++img) {
        Rng rng(derive_seed(config.dataset_seed, "scene:" + std::to_string(img)));
        synth::SceneSpec scene;
        scene.image_id = img;
        scene.noise_seed = derive_seed(config.dataset_seed, "noise:" + std::to_string(img));
        int target_objects = rng.range_int(config.min_objects, config.max_objects);
        std::vector<std::array<int, 4>> taken;
        auto overlaps = [&](int r0, int c0, int r1, int c1) {
            for (auto& t : taken)
                if (!(r1 < t[0] || t[2] < r0 || c1 < t[1] || t[3] < c0)) return true;
            return false;
        };
        for (int o = 0; o < target_objects; ++o) {
            bool placed = false;
            for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
                int eh = rng.range_int(config.min_extent, config.max_extent);
                int ew = rng.range_int(config.min_extent, config.max_extent);
                if (eh > w.grid_h || ew > w.grid_w) continue;
                int r0 = rng.range_int(0, w.grid_h - eh);
                int c0 = rng.range_int(0, w.grid_w - ew);
                int r1 = r0 + eh - 1, c1 = c0 + ew - 1;
                if (overlaps(r0, c0, r1, c1)) continue;
                synth::SceneObject obj;
                if (o == 1 && !scene.objects.empty() && rng.uniform() < config.same_subject_pair_prob) {
                    obj.subject = scene.objects[0].subject;
                } else {
                    obj.subject = w.subjects[rng.below(w.subjects.size())];
                }
                do {
                    obj.attribute_values.clear();
                    for (const auto& t : types) {
                        const auto& pool = w.attribute_types.at(t);
                        obj.attribute_values.push_back(pool[rng.below(pool.size())]);
                    }
                } while (!scene.objects.empty() && obj.subject == scene.objects[0].subject &&
                         obj.attribute_values == scene.objects[0].attribute_values);
                obj.row0 = r0;
                obj.col0 = c0;
                obj.row1 = r1;
                obj.col1 = c1;
                taken.push_back({r0, c0, r1, c1});
                scene.objects.push_back(std::move(obj));
                placed = true;
            }
        }
        if (rng.uniform() < config.distractor_prob) {
            for (int attempt = 0; attempt < 10; ++attempt) {
                int eh = rng.range_int(1, 2), ew = rng.range_int(1, 2);
                int r0 = rng.range_int(0, w.grid_h - eh);
                int c0 = rng.range_int(0, w.grid_w - ew);
                if (overlaps(r0, c0, r0 + eh - 1, c0 + ew - 1)) continue;
                synth::SceneDistractor dis;
                int n_attrs = rng.range_int(1, 2);
                for (int i = 0; i < n_attrs; ++i) {
                    const auto& t = types[rng.below(types.size())];
                    const auto& pool = w.attribute_types.at(t);
                    dis.attribute_values.push_back(pool[rng.below(pool.size())]);
                }
                dis.row0 = r0;
                dis.col0 = c0;
                dis.row1 = r0 + eh - 1;
                dis.col1 = c0 + ew - 1;
                scene.distractors.push_back(std::move(dis));
                break;
            }
        }

        for (size_t o = 0; o < scene.objects.size(); ++o) {
            const auto& obj = scene.objects[o];
            int cid = intern_class(obj);
            for (const auto& track : config.tracks) {
                AnnotationRecord rec;
                rec.image_id = img;
                rec.object_index = static_cast<int>(o);
                rec.gt_box = Box::from_array(obj.box(w.grid_h, w.grid_w));
                rec.positive = ds.vocabulary[cid];
                uint64_t nseed = derive_seed(config.dataset_seed,
                                             track.name + ":" + std::to_string(img) + ":" +
                                                 std::to_string(o));
                auto negs = generate_negatives(rec.positive, track.attributes_substituted,
                                               w.attribute_types, track.negatives_per_annotation,
                                               nseed, track.attribute_type);
                rec.negatives = std::move(negs.negatives);
                ds.annotations[track.name].push_back(std::move(rec));
            }
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

// Per-annotation caption order is a seeded shuffle (so ties cannot silently
// favor the positive at index 0). Returns the ordered captions and the
// positive's index.
struct OrderedCaptions {
    std::vector<vocab::FineGrainedClass> captions;
    int positive_index = 0;
};

inline OrderedCaptions ordered_captions(const AnnotationRecord& rec, uint64_t eval_seed) {
    OrderedCaptions out;
    out.captions.push_back(rec.positive);
    for (const auto& n : rec.negatives) out.captions.push_back(n);
    std::vector<int> order(out.captions.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(eval_seed, "caption-order:" + std::to_string(rec.image_id) + ":" +
                                       std::to_string(rec.object_index) + ":" + rec.positive.full_name));
    rng.shuffle(order);
    std::vector<vocab::FineGrainedClass> shuffled;
    for (size_t i = 0; i < order.size(); ++i) {
        shuffled.push_back(out.captions[order[i]]);
        if (order[i] == 0) out.positive_index = static_cast<int>(i);
    }
    out.captions = std::move(shuffled);
    return out;
}

// Calibration scorer: scores each annotation's gt box directly against the
// clean planted directions (no detector, no mixing). The emitted benchmark
// must be solvable by this oracle at mAP >= 0.95.
inline APResult oracle_evaluate(const SyntheticDataset& ds, const synth::DirectionRegistry& registry,
                                double m_fine = 100.0, double iou_threshold = 0.5,
                                uint64_t eval_seed = 99) {
    synth::SyntheticImageEncoder image_enc(
        std::make_shared<synth::DirectionRegistry>(registry.config()));
    std::map<int, enc::SpatialFeatureMap> maps;
    for (const auto& scene : ds.scenes) maps[scene.image_id] = image_enc.encode(scene);

    APResult result;
    for (const auto& [track, records] : ds.annotations) {
        std::vector<AnnotationEval> evals;
        for (const auto& rec : records) {
            auto ordered = ordered_captions(rec, eval_seed);
            const auto& map = maps.at(rec.image_id);
            std::vector<double> pooled(map.dim, 0.0);
            {
                auto region = fgovd::fgad::pool_region(map, rec.gt_box);
                pooled = region.vector;
            }
            std::vector<double> logits;
            for (const auto& cap : ordered.captions) {
                std::vector<std::string> phrases = {cap.subject};
                for (auto& a : cap.attributes) phrases.push_back(a);
                logits.push_back(m_fine * dot(pooled, registry.clean_composite(phrases)));
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            std::vector<double> scores(logits.size());
            double sum = 0.0;
            for (size_t i = 0; i < logits.size(); ++i) {
                scores[i] = std::exp(logits[i] - mx);
                sum += scores[i];
            }
            for (auto& s : scores) s /= sum;
            AnnotationEval ev;
            ev.gt_box = rec.gt_box;
            ev.positive_index = ordered.positive_index;
            ev.predictions.push_back({rec.gt_box, scores});
            evals.push_back(std::move(ev));
        }
        double ap = evaluate_track(evals, iou_threshold);
        result.per_track[track] = ap;
        result.annotations += static_cast<int>(records.size());
        result.predictions += static_cast<int>(records.size());
    }
    for (auto& [_, ap] : result.per_track) result.average += ap;
    if (!result.per_track.empty()) result.average /= static_cast<double>(result.per_track.size());
    return result;
}

} // namespace fgovd::eval
