#pragma once

#include <span>
#include <string>

#include "efanet/data.hpp"
#include "efanet/ops.hpp"

namespace efanet {

template <typename T>
struct Batch {
    Tensor<T> image;  // N x C x H x W
    Tensor<T> mask;   // N x 1 x H x W
    Tensor<T> edge;   // N x 1 x H x W
};

// Stacks equally sized samples into batch tensors.
template <typename T>
Batch<T> make_batch(std::span<const SegSample> samples) {
    if (samples.empty()) throw ShapeError("make_batch: no samples");
    const auto& first = samples.front();
    const int N = static_cast<int>(samples.size()), C = first.image.channels, H = first.image.height,
              W = first.image.width;
    Batch<T> b{Tensor<T>(Shape{N, C, H, W}), Tensor<T>(Shape{N, 1, H, W}), Tensor<T>(Shape{N, 1, H, W})};
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        const auto& s = samples[static_cast<std::size_t>(n)];
        if (s.image.channels != C || s.image.height != H || s.image.width != W || s.mask.height != H ||
            s.mask.width != W || s.edge.height != H || s.edge.width != W) {
            throw ShapeError("make_batch: sample '" + s.id + "' differs in size from '" + first.id + "'");
        }
        for (std::size_t i = 0; i < plane * C; ++i) b.image.data()[n * plane * C + i] = static_cast<T>(s.image.pixels[i]);
        for (std::size_t i = 0; i < plane; ++i) {
            b.mask.data()[n * plane + i] = static_cast<T>(s.mask.values[i]);
            b.edge.data()[n * plane + i] = static_cast<T>(s.edge.values[i]);
        }
    }
    return b;
}

// sigmoid of one single-channel logit plane.
template <typename T>
ProbMap probability_map(const Tensor<T>& logits, int n = 0) {
    const Shape s = logits.shape();
    if (s.c != 1 || n < 0 || n >= s.n) throw ShapeError("probability_map: expected N x 1 x H x W logits");
    ProbMap p(s.h, s.w);
    const std::size_t plane = s.plane();
    for (std::size_t i = 0; i < plane; ++i)
        p.values[i] = detail::stable_sigmoid(static_cast<double>(logits.data()[n * plane + i]));
    return p;
}

}  // namespace efanet
