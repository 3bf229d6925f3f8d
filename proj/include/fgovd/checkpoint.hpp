#pragma once

// Checkpoint file: named float32 arrays with shapes plus a config echo used
// to validate shapes on load. Values are little-endian.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fgovd/encoders.hpp"
#include "fgovd/tensor.hpp"

namespace fgovd::ckpt {

namespace detail {
inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
} // namespace detail

inline void save_arrays(const std::string& path,
                        const std::vector<std::pair<std::string, const Mat*>>& arrays,
                        const nlohmann::json& config_echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << "FGCKPT1\n";
    std::string cfg = config_echo.dump();
    detail::write_u32(out, static_cast<uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_u32(out, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, mat] : arrays) {
        detail::write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<uint32_t>(mat->rows));
        detail::write_u32(out, static_cast<uint32_t>(mat->cols));
        for (double v : mat->a) enc::detail::write_f32_le(out, static_cast<float>(v));
    }
}

struct Checkpoint {
    nlohmann::json config_echo;
    std::map<std::string, Mat> arrays;
};

inline Checkpoint load_arrays(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "FGCKPT1") throw std::runtime_error("bad checkpoint magic: " + path);
    Checkpoint ck;
    uint32_t cfg_len = detail::read_u32(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), cfg_len);
    ck.config_echo = nlohmann::json::parse(cfg);
    uint32_t count = detail::read_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rows = detail::read_u32(in);
        uint32_t cols = detail::read_u32(in);
        Mat m(static_cast<int>(rows), static_cast<int>(cols));
        for (auto& v : m.a) v = enc::detail::read_f32_le(in);
        ck.arrays[name] = std::move(m);
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ck;
}

// Copy a loaded array into an existing Mat, validating the shape.
inline void restore_into(const Checkpoint& ck, const std::string& name, Mat& dst) {
    auto it = ck.arrays.find(name);
    if (it == ck.arrays.end()) throw std::runtime_error("checkpoint missing array: " + name);
    if (!it->second.same_shape(dst))
        throw std::runtime_error("checkpoint shape mismatch for array: " + name);
    dst = it->second;
}

} // namespace fgovd::ckpt
