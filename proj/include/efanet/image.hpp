#pragma once

#include <cstdint>
#include <vector>

namespace efanet {

// Planar (C, H, W) float image with values in [0, 1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel H x W grid.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    T& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Mask = Grid<std::uint8_t>;  // 0 or 1
using ProbMap = Grid<double>;     // values in [0, 1]

}  // namespace efanet
