#pragma once

// Text file formats: dataset manifest + per-image records, prediction
// records, training logs, result tables. Everything is JSON-lines or JSON
// with sorted keys, so seeded reruns are byte-identical and diffable.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fgovd/eval.hpp"
#include "fgovd/pipeline.hpp"
#include "fgovd/training.hpp"

namespace fgovd::io {

using nlohmann::json;

// ---- json helpers for core types ----

inline json to_json(const Box& b) { return json::array({b.cx, b.cy, b.w, b.h}); }

inline Box box_from_json(const json& j) { return Box{j.at(0), j.at(1), j.at(2), j.at(3)}; }

inline json to_json(const vocab::FineGrainedClass& c) {
    return json{{"attributes", c.attributes},
                {"full_name", c.full_name},
                {"id", c.class_id},
                {"subject", c.subject}};
}

inline vocab::FineGrainedClass class_from_json(const json& j) {
    vocab::FineGrainedClass c;
    c.class_id = j.at("id").get<int>();
    c.full_name = j.at("full_name").get<std::string>();
    c.subject = j.at("subject").get<std::string>();
    c.attributes = j.at("attributes").get<std::vector<std::string>>();
    return c;
}

inline json to_json(const synth::WorldConfig& w) {
    return json{{"attribute_types", w.attribute_types},
                {"attribute_weight", w.attribute_weight},
                {"dim", w.dim},
                {"distractor_weight", w.distractor_weight},
                {"entanglement", w.entanglement},
                {"grid_h", w.grid_h},
                {"grid_w", w.grid_w},
                {"noise_scale", w.noise_scale},
                {"seed", w.seed},
                {"stride", w.stride},
                {"subjects", w.subjects}};
}

inline synth::WorldConfig world_from_json(const json& j) {
    synth::WorldConfig w;
    w.attribute_types = j.at("attribute_types").get<std::map<std::string, std::vector<std::string>>>();
    w.attribute_weight = j.at("attribute_weight");
    w.dim = j.at("dim");
    w.distractor_weight = j.at("distractor_weight");
    w.entanglement = j.at("entanglement");
    w.grid_h = j.at("grid_h");
    w.grid_w = j.at("grid_w");
    w.noise_scale = j.at("noise_scale");
    w.seed = j.at("seed");
    w.stride = j.at("stride");
    w.subjects = j.at("subjects").get<std::vector<std::string>>();
    return w;
}

// ---- dataset files: manifest.json + images.jsonl ----

inline void save_dataset(const eval::SyntheticDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    json tracks = json::array();
    for (const auto& t : ds.config.tracks)
        tracks.push_back(json{{"attribute_type", t.attribute_type},
                              {"attributes_substituted", t.attributes_substituted},
                              {"name", t.name},
                              {"negatives_per_annotation", t.negatives_per_annotation}});
    json vocabulary = json::array();
    for (const auto& c : ds.vocabulary) vocabulary.push_back(to_json(c));
    json manifest = {
        {"dataset_seed", ds.config.dataset_seed},
        {"distractor_prob", ds.config.distractor_prob},
        {"images", ds.config.images},
        {"max_extent", ds.config.max_extent},
        {"max_objects", ds.config.max_objects},
        {"min_extent", ds.config.min_extent},
        {"min_objects", ds.config.min_objects},
        {"same_subject_pair_prob", ds.config.same_subject_pair_prob},
        {"tracks", tracks},
        {"vocabulary", vocabulary},
        {"world", to_json(ds.config.world)},
    };
    {
        std::ofstream out(dir + "/manifest.json");
        if (!out) throw std::runtime_error("cannot write manifest: " + dir);
        out << manifest.dump(2) << "\n";
    }

    // collect annotations per image
    std::map<int, json> ann_by_image;
    for (const auto& [track, records] : ds.annotations) {
        for (const auto& rec : records) {
            json negs = json::array();
            for (const auto& n : rec.negatives)
                negs.push_back(json{{"attributes", n.attributes}, {"full_name", n.full_name}});
            ann_by_image[rec.image_id].push_back(json{
                {"negatives", negs}, {"object", rec.object_index}, {"track", track}});
        }
    }
    std::ofstream out(dir + "/images.jsonl");
    if (!out) throw std::runtime_error("cannot write images.jsonl: " + dir);
    for (const auto& scene : ds.scenes) {
        json objects = json::array();
        for (const auto& o : scene.objects)
            objects.push_back(json{{"attribute_values", o.attribute_values},
                                   {"cells", json::array({o.row0, o.col0, o.row1, o.col1})},
                                   {"subject", o.subject}});
        json distractors = json::array();
        for (const auto& d : scene.distractors)
            distractors.push_back(json{{"attribute_values", d.attribute_values},
                                       {"cells", json::array({d.row0, d.col0, d.row1, d.col1})}});
        json rec = {
            {"annotations", ann_by_image.count(scene.image_id) ? ann_by_image[scene.image_id]
                                                               : json::array()},
            {"distractors", distractors},
            {"image_id", scene.image_id},
            {"noise_seed", scene.noise_seed},
            {"objects", objects},
        };
        out << rec.dump() << "\n";
    }
}

inline eval::SyntheticDataset load_dataset(const std::string& dir) {
    eval::SyntheticDataset ds;
    {
        std::ifstream in(dir + "/manifest.json");
        if (!in) throw std::runtime_error("cannot open manifest: " + dir);
        json manifest = json::parse(in);
        ds.config.world = world_from_json(manifest.at("world"));
        ds.config.dataset_seed = manifest.at("dataset_seed");
        ds.config.images = manifest.at("images");
        ds.config.min_objects = manifest.at("min_objects");
        ds.config.max_objects = manifest.at("max_objects");
        ds.config.min_extent = manifest.at("min_extent");
        ds.config.max_extent = manifest.at("max_extent");
        ds.config.same_subject_pair_prob = manifest.at("same_subject_pair_prob");
        ds.config.distractor_prob = manifest.at("distractor_prob");
        ds.config.tracks.clear();
        for (const auto& t : manifest.at("tracks"))
            ds.config.tracks.push_back(eval::TrackSpec{t.at("name"), t.at("negatives_per_annotation"),
                                                       t.at("attributes_substituted"),
                                                       t.at("attribute_type")});
        for (const auto& c : manifest.at("vocabulary")) ds.vocabulary.push_back(class_from_json(c));
    }
    std::ifstream in(dir + "/images.jsonl");
    if (!in) throw std::runtime_error("cannot open images.jsonl: " + dir);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        synth::SceneSpec scene;
        scene.image_id = rec.at("image_id");
        scene.noise_seed = rec.at("noise_seed");
        for (const auto& o : rec.at("objects")) {
            synth::SceneObject obj;
            obj.subject = o.at("subject");
            obj.attribute_values = o.at("attribute_values").get<std::vector<std::string>>();
            obj.row0 = o.at("cells").at(0);
            obj.col0 = o.at("cells").at(1);
            obj.row1 = o.at("cells").at(2);
            obj.col1 = o.at("cells").at(3);
            scene.objects.push_back(std::move(obj));
        }
        for (const auto& d : rec.at("distractors")) {
            synth::SceneDistractor dis;
            dis.attribute_values = d.at("attribute_values").get<std::vector<std::string>>();
            dis.row0 = d.at("cells").at(0);
            dis.col0 = d.at("cells").at(1);
            dis.row1 = d.at("cells").at(2);
            dis.col1 = d.at("cells").at(3);
            scene.distractors.push_back(std::move(dis));
        }
        for (const auto& a : rec.at("annotations")) {
            eval::AnnotationRecord ann;
            ann.image_id = scene.image_id;
            ann.object_index = a.at("object");
            const auto& obj = scene.objects[ann.object_index];
            ann.gt_box = Box::from_array(obj.box(ds.config.world.grid_h, ds.config.world.grid_w));
            ann.positive = eval::class_for_object(obj);
            for (const auto& n : a.at("negatives")) {
                vocab::FineGrainedClass neg;
                neg.full_name = n.at("full_name");
                neg.subject = obj.subject;
                neg.attributes = n.at("attributes").get<std::vector<std::string>>();
                ann.negatives.push_back(std::move(neg));
            }
            ds.annotations[a.at("track")].push_back(std::move(ann));
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

// ---- prediction records ----

inline void save_predictions(const std::vector<pipeline::AnnotationPredictions>& records,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    for (const auto& rec : records) {
        json preds = json::array();
        for (const auto& p : rec.predictions) {
            preds.push_back(json{{"box", to_json(p.box)},
                                 {"coarse", p.coarse_scores},
                                 {"fine", p.fine_scores},
                                 {"final", p.final_scores},
                                 {"source", json::array({p.source_row, p.source_col})}});
        }
        json j = {
            {"captions", rec.captions},
            {"gt_box", to_json(rec.gt_box)},
            {"image_id", rec.image_id},
            {"object_index", rec.object_index},
            {"positive_index", rec.positive_index},
            {"predictions", preds},
            {"track", rec.track},
        };
        out << j.dump() << "\n";
    }
}

inline std::vector<pipeline::AnnotationPredictions> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions: " + path);
    std::vector<pipeline::AnnotationPredictions> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        pipeline::AnnotationPredictions rec;
        rec.track = j.at("track");
        rec.image_id = j.at("image_id");
        rec.object_index = j.at("object_index");
        rec.gt_box = box_from_json(j.at("gt_box"));
        rec.captions = j.at("captions").get<std::vector<std::string>>();
        rec.positive_index = j.at("positive_index");
        for (const auto& p : j.at("predictions")) {
            cgod::Prediction pred;
            pred.box = box_from_json(p.at("box"));
            pred.coarse_scores = p.at("coarse").get<std::vector<double>>();
            pred.fine_scores = p.at("fine").get<std::vector<double>>();
            pred.final_scores = p.at("final").get<std::vector<double>>();
            pred.source_row = p.at("source").at(0);
            pred.source_col = p.at("source").at(1);
            rec.predictions.push_back(std::move(pred));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---- training log ----

inline void save_training_log(const std::vector<train::IterationLog>& logs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path);
    for (const auto& l : logs) {
        json j = {{"box", l.box},
                  {"classification", l.classification},
                  {"fine", l.fine},
                  {"iteration", l.iteration},
                  {"total", l.total}};
        out << j.dump() << "\n";
    }
}

// ---- result table ----

inline std::string format_ap_table(const std::map<std::string, eval::APResult>& rows) {
    std::vector<std::string> tracks;
    if (!rows.empty())
        for (const auto& [t, _] : rows.begin()->second.per_track) tracks.push_back(t);
    std::string out = "configuration";
    for (const auto& t : tracks) out += "\t" + t;
    out += "\tmAP\n";
    char buf[64];
    for (const auto& [name, result] : rows) {
        out += name;
        for (const auto& t : tracks) {
            std::snprintf(buf, sizeof(buf), "\t%.4f",
                          result.per_track.count(t) ? result.per_track.at(t) : 0.0);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "\t%.4f\n", result.average);
        out += buf;
    }
    return out;
}

} // namespace fgovd::io
