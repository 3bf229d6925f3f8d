#pragma once

// Text/image encoder abstraction. Backends are frozen and deterministic;
// the only trainable piece here is the linear projection head that turns
// the frozen text encoder into the refined one. A file-based backend loads
// precomputed embeddings so real models never have to be shipped.

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgovd/tensor.hpp"
#include "fgovd/vocabulary.hpp"

namespace fgovd::enc {

struct EmbeddingVector {
    std::vector<double> values;
    bool normalized = false;

    int dim() const { return static_cast<int>(values.size()); }
};

inline EmbeddingVector make_unit(std::vector<double> v) {
    EmbeddingVector e;
    e.values = normalized(std::move(v));
    e.normalized = true;
    return e;
}

struct EmbeddingSet {
    Mat subjects;                       // n x d, one row per class subject
    std::vector<Mat> attributes;        // per class: n_j x d (n_j may be 0)
    Mat refined_full;                   // n x d, through the projection head
    Mat raw_full;                       // n x d, frozen encoder output

    int size() const { return subjects.rows; }
};

struct ProjectionHead {
    Mat weight; // d x d
    Mat bias;   // 1 x d
    bool trainable = true;

    static ProjectionHead identity(int d) {
        ProjectionHead h;
        h.weight = Mat::identity(d);
        h.bias = Mat(1, d);
        return h;
    }

    int dim() const { return weight.rows; }
};

struct SpatialFeatureMap {
    int height = 0;       // grid rows
    int width = 0;        // grid cols
    int dim = 0;
    int stride = 32;      // pixels per cell
    int image_height = 0; // pixels
    int image_width = 0;  // pixels
    Mat features;         // (height*width) x dim, row-major over the grid

    int cells() const { return height * width; }
    int cell_index(int row, int col) const { return row * width + col; }
    std::vector<double> cell(int row, int col) const { return features.row_vec(cell_index(row, col)); }

    bool covers_image() const {
        return height * stride >= image_height && width * stride >= image_width;
    }
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual EmbeddingVector encode(const std::string& text) const = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
};

inline EmbeddingVector encode_text(const TextEncoder& backend, const std::string& text) {
    if (text.empty()) throw std::invalid_argument("encode_text: empty text");
    EmbeddingVector e = backend.encode(text);
    if (e.dim() != backend.dim()) throw std::runtime_error("encode_text: dimension mismatch");
    if (!e.normalized) e = make_unit(std::move(e.values));
    return e;
}

// normalize(W e + b); with W = I, b = 0 this is the identity on unit inputs.
inline EmbeddingVector refine_embedding(const ProjectionHead& head, const EmbeddingVector& e) {
    if (e.dim() != head.dim()) throw std::invalid_argument("refine_embedding: dimension mismatch");
    std::vector<double> out(head.dim(), 0.0);
    for (int i = 0; i < head.dim(); ++i) {
        double s = head.bias.at(0, i);
        for (int j = 0; j < head.dim(); ++j) s += head.weight.at(i, j) * e.values[j];
        out[i] = s;
    }
    return make_unit(std::move(out));
}

// Subject, attribute and refined full-name embeddings for a parsed
// vocabulary. Backend failures are recorded per class (zero row + entry in
// failed) instead of aborting the batch.
inline EmbeddingSet embed_vocabulary(const std::vector<vocab::FineGrainedClass>& vocabulary,
                                     const TextEncoder& backend, const ProjectionHead& head,
                                     std::vector<int>* failed = nullptr) {
    const int d = backend.dim();
    EmbeddingSet set;
    set.subjects = Mat(static_cast<int>(vocabulary.size()), d);
    set.refined_full = Mat(static_cast<int>(vocabulary.size()), d);
    set.raw_full = Mat(static_cast<int>(vocabulary.size()), d);
    set.attributes.resize(vocabulary.size());
    for (size_t i = 0; i < vocabulary.size(); ++i) {
        const auto& cls = vocabulary[i];
        try {
            set.subjects.set_row(static_cast<int>(i), encode_text(backend, cls.subject).values);
            Mat attrs(static_cast<int>(cls.attributes.size()), d);
            for (size_t j = 0; j < cls.attributes.size(); ++j)
                attrs.set_row(static_cast<int>(j), encode_text(backend, cls.attributes[j]).values);
            set.attributes[i] = std::move(attrs);
            EmbeddingVector raw = encode_text(backend, cls.full_name);
            set.raw_full.set_row(static_cast<int>(i), raw.values);
            set.refined_full.set_row(static_cast<int>(i), refine_embedding(head, raw).values);
        } catch (const std::exception&) {
            if (failed) failed->push_back(static_cast<int>(i));
            set.attributes[i] = Mat(0, d);
        }
    }
    return set;
}

// ---- precomputed-embedding file ----
// Layout: magic "FGEMB1\n", then dim and count as decimal text lines, then
// one name per line, then count*dim float32 little-endian values.

namespace detail {
inline void write_f32_le(std::ostream& out, float v) {
    static_assert(sizeof(float) == 4);
    unsigned char b[4];
    std::memcpy(b, &v, 4);
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
#endif
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
#endif
    float v;
    std::memcpy(&v, b, 4);
    return v;
}
} // namespace detail

inline void save_embedding_file(const std::string& path, const std::vector<std::string>& names,
                                const Mat& rows) {
    if (static_cast<int>(names.size()) != rows.rows)
        throw std::invalid_argument("save_embedding_file: name/row count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    out << "FGEMB1\n" << rows.cols << "\n" << rows.rows << "\n";
    for (const auto& n : names) out << n << "\n";
    for (double v : rows.a) detail::write_f32_le(out, static_cast<float>(v));
}

inline std::pair<std::vector<std::string>, Mat> load_embedding_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "FGEMB1") throw std::runtime_error("bad embedding file magic: " + path);
    std::string line;
    std::getline(in, line);
    int d = std::stoi(line);
    std::getline(in, line);
    int count = std::stoi(line);
    std::vector<std::string> names(count);
    for (auto& n : names) std::getline(in, n);
    Mat rows(count, d);
    for (auto& v : rows.a) v = detail::read_f32_le(in);
    if (!in) throw std::runtime_error("truncated embedding file: " + path);
    return {std::move(names), std::move(rows)};
}

// Reference "real backend" path: embeddings precomputed offline and loaded
// from disk; unknown text is an error.
class FileTextEncoder final : public TextEncoder {
public:
    explicit FileTextEncoder(const std::string& path) {
        auto [names, rows] = load_embedding_file(path);
        dim_ = rows.cols;
        for (size_t i = 0; i < names.size(); ++i) rows_[names[i]] = rows.row_vec(static_cast<int>(i));
    }

    EmbeddingVector encode(const std::string& text) const override {
        auto it = rows_.find(text);
        if (it == rows_.end()) throw std::runtime_error("no precomputed embedding for: " + text);
        return make_unit(it->second);
    }

    int dim() const override { return dim_; }
    std::string id() const override { return "file"; }

private:
    int dim_ = 0;
    std::map<std::string, std::vector<double>> rows_;
};

} // namespace fgovd::enc
