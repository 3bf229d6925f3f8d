#pragma once

#include <array>
#include <stdexcept>

namespace fgovd {

// (cx, cy, w, h), all normalized to [0,1]
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    static Box from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
    std::array<double, 4> to_array() const { return {cx, cy, w, h}; }

    // corners (x0, y0, x1, y1)
    std::array<double, 4> corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }

    bool degenerate() const { return w <= 0.0 || h <= 0.0; }
};

} // namespace fgovd
