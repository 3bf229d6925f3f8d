#pragma once

// Coarse-grained object detection. Encoder features are classified against
// subject embeddings, the top-k cells become object queries, attribute
// embeddings are fused into the queries by a small cross-attention layer
// (keys are attribute-minus-subject differences), and a toy decoder turns
// queries into prediction embeddings and boxes. All forward math runs on the
// autodiff graph so training and inference share one implementation.

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgovd/autodiff.hpp"
#include "fgovd/box.hpp"
#include "fgovd/encoders.hpp"
#include "fgovd/rng.hpp"
#include "fgovd/tensor.hpp"

namespace fgovd::cgod {

constexpr double kLogitClamp = 80.0;

struct QueryCandidate {
    std::vector<double> embedding;
    int matched_class = 0;
    int source_row = 0;
    int source_col = 0;
    int source_index = 0; // flat row into F_enc
    double selection_logit = 0.0;
};

struct Prediction {
    std::vector<double> embedding;       // p_j
    Box box;                             // b_j
    std::vector<double> coarse_logits;   // l_coarse, one per class
    std::vector<double> coarse_scores;   // sigmoid(l_coarse)
    std::vector<double> fine_logits;     // filled by fgad
    std::vector<double> fine_scores;     // s_fine
    std::vector<double> final_scores;    // s_final
    int matched_class = 0;
    int source_row = 0;
    int source_col = 0;
};

// ---- parameters ----

struct AefParams {
    Mat learnable_query; // 1 x d
    Mat key_proj, query_proj, value_proj, out_proj; // d x d
    double attention_scale = 8.0; // sqrt(d)
};

struct AttnLayerParams {
    Mat wq, wk, wv, wo; // d x d
};

struct FfnParams {
    Mat w1; // d x h
    Mat b1; // 1 x h
    Mat w2; // h x d
    Mat b2; // 1 x d
};

struct DecoderLayerParams {
    AttnLayerParams attn;
    FfnParams ffn;
};

struct BoxHeadParams {
    Mat a1, b1; // d x h, 1 x h
    Mat a2, b2; // h x h, 1 x h
    Mat a3, b3; // h x 4, 1 x 4
};

struct DetectorConfig {
    int dim = 64;
    int grid_h = 8;
    int grid_w = 8;
    int top_k = 16;           // 900 at real scale
    int decoder_layers = 2;
    int refiner_layers = 1;
    int ffn_hidden = 128;
    int box_hidden = 64;
    double m_coarse = 100.0;
    double anchor_size = 0.35;
    double pos_scale = 0.35;
    bool use_aef = true;
    uint64_t init_seed = 7;
};

struct DetectorModel {
    DetectorConfig config;
    Mat pos_enc; // (grid_h*grid_w) x d, fixed (not trained)
    std::vector<AttnLayerParams> refiner;
    AefParams aef;
    std::vector<DecoderLayerParams> decoder;
    BoxHeadParams box_head;

    std::vector<std::pair<std::string, Mat*>> named_params() {
        std::vector<std::pair<std::string, Mat*>> out;
        for (size_t i = 0; i < refiner.size(); ++i) {
            auto p = "refiner." + std::to_string(i) + ".";
            out.push_back({p + "wq", &refiner[i].wq});
            out.push_back({p + "wk", &refiner[i].wk});
            out.push_back({p + "wv", &refiner[i].wv});
            out.push_back({p + "wo", &refiner[i].wo});
        }
        out.push_back({"aef.query", &aef.learnable_query});
        out.push_back({"aef.key_proj", &aef.key_proj});
        out.push_back({"aef.query_proj", &aef.query_proj});
        out.push_back({"aef.value_proj", &aef.value_proj});
        out.push_back({"aef.out_proj", &aef.out_proj});
        for (size_t i = 0; i < decoder.size(); ++i) {
            auto p = "decoder." + std::to_string(i) + ".";
            out.push_back({p + "wq", &decoder[i].attn.wq});
            out.push_back({p + "wk", &decoder[i].attn.wk});
            out.push_back({p + "wv", &decoder[i].attn.wv});
            out.push_back({p + "wo", &decoder[i].attn.wo});
            out.push_back({p + "ffn.w1", &decoder[i].ffn.w1});
            out.push_back({p + "ffn.b1", &decoder[i].ffn.b1});
            out.push_back({p + "ffn.w2", &decoder[i].ffn.w2});
            out.push_back({p + "ffn.b2", &decoder[i].ffn.b2});
        }
        out.push_back({"box_head.a1", &box_head.a1});
        out.push_back({"box_head.b1", &box_head.b1});
        out.push_back({"box_head.a2", &box_head.a2});
        out.push_back({"box_head.b2", &box_head.b2});
        out.push_back({"box_head.a3", &box_head.a3});
        out.push_back({"box_head.b3", &box_head.b3});
        return out;
    }
};

// Positional channels: two linear-in-coordinate directions (for centers) and
// two quadratic ones (so attention means can carry extent information).
inline Mat build_positional_encoding(const DetectorConfig& cfg) {
    std::vector<std::vector<double>> dirs;
    for (const char* tag : {"pos-x", "pos-y", "pos-x2", "pos-y2"}) {
        Rng rng(derive_seed(cfg.init_seed, std::string("pe:") + tag));
        std::vector<double> v(cfg.dim);
        for (auto& x : v) x = rng.gaussian();
        dirs.push_back(normalized(std::move(v)));
    }
    Mat pe(cfg.grid_h * cfg.grid_w, cfg.dim);
    for (int r = 0; r < cfg.grid_h; ++r) {
        for (int c = 0; c < cfg.grid_w; ++c) {
            double x = (c + 0.5) / cfg.grid_w - 0.5;
            double y = (r + 0.5) / cfg.grid_h - 0.5;
            int idx = r * cfg.grid_w + c;
            for (int k = 0; k < cfg.dim; ++k) {
                pe.at(idx, k) = cfg.pos_scale * (dirs[0][k] * x + dirs[1][k] * y +
                                                 dirs[2][k] * 4.0 * x * x + dirs[3][k] * 4.0 * y * y);
            }
        }
    }
    return pe;
}

// Zero-initialized output projections make every residual branch start as
// the identity, so a freshly built model passes features straight through.
inline DetectorModel make_detector(const DetectorConfig& cfg) {
    DetectorModel m;
    m.config = cfg;
    m.pos_enc = build_positional_encoding(cfg);
    Rng rng(derive_seed(cfg.init_seed, "detector-init"));
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    auto attn_layer = [&]() {
        AttnLayerParams l;
        l.wq = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
        l.wk = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
        l.wv = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
        l.wo = Mat(cfg.dim, cfg.dim);
        return l;
    };
    for (int i = 0; i < cfg.refiner_layers; ++i) m.refiner.push_back(attn_layer());
    m.aef.learnable_query = Mat::gaussian(1, cfg.dim, rng, 1.0);
    m.aef.key_proj = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
    m.aef.query_proj = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
    m.aef.value_proj = Mat::gaussian(cfg.dim, cfg.dim, rng, s);
    m.aef.out_proj = Mat(cfg.dim, cfg.dim);
    m.aef.attention_scale = std::sqrt(static_cast<double>(cfg.dim));
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        DecoderLayerParams l;
        l.attn = attn_layer();
        l.ffn.w1 = Mat::gaussian(cfg.dim, cfg.ffn_hidden, rng, std::sqrt(2.0 / cfg.dim));
        l.ffn.b1 = Mat(1, cfg.ffn_hidden);
        l.ffn.w2 = Mat(cfg.ffn_hidden, cfg.dim);
        l.ffn.b2 = Mat(1, cfg.dim);
        m.decoder.push_back(std::move(l));
    }
    m.box_head.a1 = Mat::gaussian(cfg.dim, cfg.box_hidden, rng, std::sqrt(2.0 / cfg.dim));
    m.box_head.b1 = Mat(1, cfg.box_hidden);
    m.box_head.a2 = Mat::gaussian(cfg.box_hidden, cfg.box_hidden, rng, std::sqrt(2.0 / cfg.box_hidden));
    m.box_head.b2 = Mat(1, cfg.box_hidden);
    m.box_head.a3 = Mat(cfg.box_hidden, 4);
    m.box_head.b3 = Mat(1, 4);
    return m;
}

// Randomize the zero-initialized projections too (gradient checks need
// non-degenerate parameters everywhere).
inline void randomize_all(DetectorModel& m, uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, mat] : m.named_params()) {
        (void)name;
        double s = 1.0 / std::sqrt(static_cast<double>(std::max(mat->rows, 1)));
        for (auto& x : mat->a) x = rng.gaussian() * s;
    }
}

// ---- spec operations (plain value interface) ----

// logits[j][i] = scale * cosine(feature_j, subject_i); subjects must be unit.
inline Mat classify(const Mat& subject_embeddings, const Mat& features, double scale) {
    if (subject_embeddings.cols != features.cols)
        throw std::invalid_argument("classify: dimension mismatch");
    Mat logits(features.rows, subject_embeddings.rows);
    for (int j = 0; j < features.rows; ++j) {
        auto f = features.row_vec(j);
        double n = norm(f);
        if (n < 1e-12) n = 1e-12;
        for (int i = 0; i < subject_embeddings.rows; ++i) {
            double d = 0.0;
            for (int k = 0; k < features.cols; ++k) d += f[k] * subject_embeddings.at(i, k);
            logits.at(j, i) = scale * d / n;
        }
    }
    return logits;
}

// Top-k rows by max-over-class logit; ties broken by lower row index, the
// argmax class by lower class index.
inline std::vector<QueryCandidate> select_topk(const Mat& logits, const Mat& features, int k,
                                               int grid_w = 0) {
    if (k <= 0) throw std::invalid_argument("select_topk: k must be positive");
    if (k > logits.rows) throw std::invalid_argument("select_topk: k exceeds row count");
    if (logits.rows != features.rows) throw std::invalid_argument("select_topk: row mismatch");
    std::vector<std::pair<double, int>> row_max(logits.rows);
    std::vector<int> row_arg(logits.rows);
    for (int r = 0; r < logits.rows; ++r) {
        double best = logits.at(r, 0);
        int arg = 0;
        for (int c = 1; c < logits.cols; ++c) {
            if (logits.at(r, c) > best) {
                best = logits.at(r, c);
                arg = c;
            }
        }
        row_max[r] = {best, r};
        row_arg[r] = arg;
    }
    std::sort(row_max.begin(), row_max.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<QueryCandidate> out;
    out.reserve(k);
    const int w = grid_w > 0 ? grid_w : logits.rows;
    for (int i = 0; i < k; ++i) {
        QueryCandidate q;
        q.source_index = row_max[i].second;
        q.source_row = q.source_index / w;
        q.source_col = q.source_index % w;
        q.selection_logit = row_max[i].first;
        q.matched_class = row_arg[q.source_index];
        q.embedding = features.row_vec(q.source_index);
        out.push_back(std::move(q));
    }
    return out;
}

// ---- graph builders ----

struct AefNodes {
    ad::Node* learnable_query;
    ad::Node* key_proj;
    ad::Node* query_proj;
    ad::Node* value_proj;
    ad::Node* out_proj;
    double attention_scale;
};

struct AttnLayerNodes {
    ad::Node *wq, *wk, *wv, *wo;
};

struct DecoderLayerNodes {
    AttnLayerNodes attn;
    ad::Node *w1, *b1, *w2, *b2;
};

struct BoxHeadNodes {
    ad::Node *a1, *b1, *a2, *b2, *a3, *b3;
};

struct DetectorNodes {
    const DetectorModel* model = nullptr;
    std::vector<AttnLayerNodes> refiner;
    AefNodes aef;
    std::vector<DecoderLayerNodes> decoder;
    BoxHeadNodes box_head;
};

inline DetectorNodes bind_detector(ad::Graph& g, DetectorModel& m, bool trainable) {
    DetectorNodes n;
    n.model = &m;
    for (auto& l : m.refiner)
        n.refiner.push_back({g.leaf(l.wq, trainable), g.leaf(l.wk, trainable),
                             g.leaf(l.wv, trainable), g.leaf(l.wo, trainable)});
    n.aef = {g.leaf(m.aef.learnable_query, trainable), g.leaf(m.aef.key_proj, trainable),
             g.leaf(m.aef.query_proj, trainable), g.leaf(m.aef.value_proj, trainable),
             g.leaf(m.aef.out_proj, trainable), m.aef.attention_scale};
    for (auto& l : m.decoder) {
        DecoderLayerNodes d;
        d.attn = {g.leaf(l.attn.wq, trainable), g.leaf(l.attn.wk, trainable),
                  g.leaf(l.attn.wv, trainable), g.leaf(l.attn.wo, trainable)};
        d.w1 = g.leaf(l.ffn.w1, trainable);
        d.b1 = g.leaf(l.ffn.b1, trainable);
        d.w2 = g.leaf(l.ffn.w2, trainable);
        d.b2 = g.leaf(l.ffn.b2, trainable);
        n.decoder.push_back(d);
    }
    n.box_head = {g.leaf(m.box_head.a1, trainable), g.leaf(m.box_head.b1, trainable),
                  g.leaf(m.box_head.a2, trainable), g.leaf(m.box_head.b2, trainable),
                  g.leaf(m.box_head.a3, trainable), g.leaf(m.box_head.b3, trainable)};
    return n;
}

// Collect the bound leaves in named_params() order (for SGD / grad checks).
inline std::vector<ad::Node*> bound_leaves(const DetectorNodes& n) {
    std::vector<ad::Node*> out;
    for (auto& l : n.refiner) {
        out.push_back(l.wq);
        out.push_back(l.wk);
        out.push_back(l.wv);
        out.push_back(l.wo);
    }
    out.push_back(n.aef.learnable_query);
    out.push_back(n.aef.key_proj);
    out.push_back(n.aef.query_proj);
    out.push_back(n.aef.value_proj);
    out.push_back(n.aef.out_proj);
    for (auto& d : n.decoder) {
        out.push_back(d.attn.wq);
        out.push_back(d.attn.wk);
        out.push_back(d.attn.wv);
        out.push_back(d.attn.wo);
        out.push_back(d.w1);
        out.push_back(d.b1);
        out.push_back(d.w2);
        out.push_back(d.b2);
    }
    out.push_back(n.box_head.a1);
    out.push_back(n.box_head.b1);
    out.push_back(n.box_head.a2);
    out.push_back(n.box_head.b2);
    out.push_back(n.box_head.a3);
    out.push_back(n.box_head.b3);
    return out;
}

// F_conv (+ positional channels) through the refiner self-attention stack.
// With zero layers F_enc is F_conv untouched.
inline ad::Node* build_f_enc(ad::Graph& g, const DetectorNodes& n, ad::Node* f_conv) {
    if (n.refiner.empty()) return f_conv;
    ad::Node* x = g.add(f_conv, g.constant(n.model->pos_enc));
    const double scale = std::sqrt(static_cast<double>(n.model->config.dim));
    for (const auto& l : n.refiner) {
        ad::Node* q = g.matmul(x, l.wq);
        ad::Node* k = g.matmul(x, l.wk);
        ad::Node* v = g.matmul(x, l.wv);
        ad::Node* a = g.attention(q, k, v, scale);
        x = g.add(x, g.matmul(a, l.wo));
    }
    return x;
}

// ATTN(q_learn, {0} u {t_ij - t_i}, {t_i} u {t_ij}) through the projections;
// the caller adds the result to each query of the matched class.
inline ad::Node* build_aef_delta(ad::Graph& g, const AefNodes& aef, ad::Node* subject,
                                 ad::Node* attributes) {
    std::vector<ad::Node*> key_parts, value_parts;
    key_parts.push_back(g.constant(Mat(1, subject->val.cols))); // t_i - t_i
    value_parts.push_back(subject);
    if (attributes->val.rows > 0) {
        key_parts.push_back(g.add_rowvec(attributes, g.scale(subject, -1.0)));
        value_parts.push_back(attributes);
    }
    ad::Node* keys = g.matmul(g.concat_rows(key_parts), aef.key_proj);
    ad::Node* values = g.matmul(g.concat_rows(value_parts), aef.value_proj);
    ad::Node* query = g.matmul(aef.learnable_query, aef.query_proj);
    ad::Node* attended = g.attention(query, keys, values, aef.attention_scale);
    return g.matmul(attended, aef.out_proj);
}

// L cross-attention + FFN layers, queries processed independently (no
// self-attention between queries).
inline ad::Node* build_decoder(ad::Graph& g, const DetectorNodes& n, ad::Node* queries,
                               ad::Node* f_enc) {
    ad::Node* x = queries;
    const double scale = std::sqrt(static_cast<double>(n.model->config.dim));
    for (const auto& l : n.decoder) {
        ad::Node* q = g.matmul(x, l.attn.wq);
        ad::Node* k = g.matmul(f_enc, l.attn.wk);
        ad::Node* v = g.matmul(f_enc, l.attn.wv);
        ad::Node* a = g.attention(q, k, v, scale);
        x = g.add(x, g.matmul(a, l.attn.wo));
        ad::Node* hidden = g.relu(g.add_rowvec(g.matmul(x, l.w1), l.b1));
        x = g.add(x, g.add_rowvec(g.matmul(hidden, l.w2), l.b2));
    }
    return x;
}

inline double logit_of(double p) {
    p = std::min(std::max(p, 1e-4), 1.0 - 1e-4);
    return std::log(p / (1.0 - p));
}

inline Mat anchor_logits_for(const std::vector<QueryCandidate>& selection, const DetectorConfig& cfg) {
    Mat anchors(static_cast<int>(selection.size()), 4);
    for (size_t i = 0; i < selection.size(); ++i) {
        double cx = (selection[i].source_col + 0.5) / cfg.grid_w;
        double cy = (selection[i].source_row + 0.5) / cfg.grid_h;
        anchors.at(static_cast<int>(i), 0) = logit_of(cx);
        anchors.at(static_cast<int>(i), 1) = logit_of(cy);
        anchors.at(static_cast<int>(i), 2) = logit_of(cfg.anchor_size);
        anchors.at(static_cast<int>(i), 3) = logit_of(cfg.anchor_size);
    }
    return anchors;
}

// boxes = sigmoid(mlp(p) + anchor_logits), squashed into [0,1]^4
inline ad::Node* build_box_head(ad::Graph& g, const DetectorNodes& n, ad::Node* pred,
                                const Mat& anchor_logits) {
    const auto& bh = n.box_head;
    ad::Node* h = g.relu(g.add_rowvec(g.matmul(pred, bh.a1), bh.b1));
    h = g.relu(g.add_rowvec(g.matmul(h, bh.a2), bh.b2));
    ad::Node* raw = g.add_rowvec(g.matmul(h, bh.a3), bh.b3);
    return g.sigmoid(g.add(raw, g.constant(anchor_logits)));
}

// l = m_coarse * cos(p, t_i), clamped, then sigmoid
inline ad::Node* build_coarse_logits(ad::Graph& g, ad::Node* pred, const Mat& subjects,
                                     double m_coarse) {
    ad::Node* unit = g.l2_normalize_rows(pred);
    ad::Node* cos = g.matmul(unit, g.constant(transpose(subjects)));
    return g.clamp(g.scale(cos, m_coarse), -kLogitClamp, kLogitClamp);
}

struct TailOutputs {
    ad::Node* fused_queries;  // k x d
    ad::Node* pred;           // k x d
    ad::Node* boxes;          // k x 4
    ad::Node* coarse_logits;  // k x n
    ad::Node* coarse_scores;  // k x n
    Mat anchor_logits;
};

// Everything after selection: AEF fusion, decoder, boxes, coarse scores.
// `class_attributes[i]` are the attribute embeddings of class i.
inline TailOutputs build_tail(ad::Graph& g, const DetectorNodes& n, ad::Node* f_enc,
                              const std::vector<QueryCandidate>& selection, const Mat& subjects,
                              const std::vector<Mat>& class_attributes) {
    if (selection.empty()) throw std::invalid_argument("build_tail: no queries");
    const auto& cfg = n.model->config;
    std::vector<int> rows;
    for (auto& q : selection) rows.push_back(q.source_index);
    ad::Node* queries = g.select_rows(f_enc, rows);

    ad::Node* fused = queries;
    if (cfg.use_aef) {
        std::map<int, ad::Node*> delta_by_class;
        for (auto& q : selection) {
            if (delta_by_class.count(q.matched_class)) continue;
            ad::Node* subj = g.constant(Mat::row(subjects.row_vec(q.matched_class)));
            ad::Node* attrs = g.constant(class_attributes[q.matched_class]);
            delta_by_class[q.matched_class] = build_aef_delta(g, n.aef, subj, attrs);
        }
        std::vector<ad::Node*> delta_rows;
        for (auto& q : selection) delta_rows.push_back(delta_by_class[q.matched_class]);
        fused = g.add(queries, g.concat_rows(delta_rows));
    }

    TailOutputs out;
    out.fused_queries = fused;
    out.pred = build_decoder(g, n, fused, f_enc);
    out.anchor_logits = anchor_logits_for(selection, cfg);
    out.boxes = build_box_head(g, n, out.pred, out.anchor_logits);
    out.coarse_logits = build_coarse_logits(g, out.pred, subjects, cfg.m_coarse);
    out.coarse_scores = g.sigmoid(out.coarse_logits);
    return out;
}

// ---- plain wrappers over the graph ----

inline std::vector<double> attribute_fuse(const std::vector<double>& query, const AefParams& params,
                                          const std::vector<double>& subject, const Mat& attributes) {
    ad::Graph g;
    AefNodes nodes{g.constant(params.learnable_query), g.constant(params.key_proj),
                   g.constant(params.query_proj), g.constant(params.value_proj),
                   g.constant(params.out_proj), params.attention_scale};
    ad::Node* delta =
        build_aef_delta(g, nodes, g.constant(Mat::row(subject)), g.constant(attributes));
    std::vector<double> out = query;
    for (size_t i = 0; i < out.size(); ++i) out[i] += delta->val.a[i];
    return out;
}

inline std::pair<std::vector<double>, std::vector<double>> coarse_scores(
    const std::vector<double>& pred_embedding, const Mat& subjects, double m_coarse) {
    ad::Graph g;
    ad::Node* logits = build_coarse_logits(g, g.constant(Mat::row(pred_embedding)), subjects, m_coarse);
    ad::Node* scores = g.sigmoid(logits);
    return {logits->val.a, scores->val.a};
}

// Run the post-selection pipeline with plain values (inference path).
inline std::vector<Prediction> decode_predictions(DetectorModel& model, const Mat& f_enc_val,
                                                  const std::vector<QueryCandidate>& selection,
                                                  const Mat& subjects,
                                                  const std::vector<Mat>& class_attributes) {
    ad::Graph g;
    DetectorNodes nodes = bind_detector(g, model, false);
    TailOutputs tail = build_tail(g, nodes, g.constant(f_enc_val), selection, subjects, class_attributes);
    std::vector<Prediction> out(selection.size());
    for (size_t j = 0; j < selection.size(); ++j) {
        auto& p = out[j];
        p.embedding = tail.pred->val.row_vec(static_cast<int>(j));
        p.box = Box{tail.boxes->val.at(static_cast<int>(j), 0), tail.boxes->val.at(static_cast<int>(j), 1),
                    tail.boxes->val.at(static_cast<int>(j), 2), tail.boxes->val.at(static_cast<int>(j), 3)};
        p.coarse_logits = tail.coarse_logits->val.row_vec(static_cast<int>(j));
        p.coarse_scores = tail.coarse_scores->val.row_vec(static_cast<int>(j));
        p.matched_class = selection[j].matched_class;
        p.source_row = selection[j].source_row;
        p.source_col = selection[j].source_col;
    }
    return out;
}

inline Mat compute_f_enc(DetectorModel& model, const Mat& f_conv) {
    ad::Graph g;
    DetectorNodes nodes = bind_detector(g, model, false);
    return build_f_enc(g, nodes, g.constant(f_conv))->val;
}

} // namespace fgovd::cgod
