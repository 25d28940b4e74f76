#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "efanet/ops.hpp"

namespace efanet {

template <typename T>
void require_binary(const std::string& what, const Tensor<T>& t) {
    for (T v : t.data()) {
        if (v != T(0) && v != T(1)) throw ShapeError(what + " must be binary (0/1), found value " + std::to_string(v));
    }
}

// Box size of the boundary-emphasis pooling: 31 at 352 px, scaled with the
// height to the nearest odd integer, at least 3.
inline int boundary_kernel_size(int height) {
    const double v = 31.0 * height / 352.0;
    const int k = 2 * static_cast<int>(std::lround((v - 1.0) / 2.0)) + 1;
    return std::max(3, k);
}

// w = 1 + 5 * |avgpool_k(G) - G|, zero padding included in the average.
template <typename T>
Tensor<T> boundary_weights(const Tensor<T>& mask, int kernel) {
    const Shape s = mask.shape();
    const int r = kernel / 2;
    const double area = static_cast<double>(kernel) * kernel;
    Tensor<T> out(s);
    std::vector<double> integral(static_cast<std::size_t>(s.h + 1) * (s.w + 1));
    auto I = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (s.w + 1) + x]; };
    for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
        const T* g = mask.data().data() + p * s.plane();
        T* w = out.data().data() + p * s.plane();
        for (int y = 0; y < s.h; ++y) {
            double row = 0;
            for (int x = 0; x < s.w; ++x) {
                row += g[y * s.w + x];
                I(y + 1, x + 1) = I(y, x + 1) + row;
            }
        }
        for (int y = 0; y < s.h; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(s.h, y + r + 1);
            for (int x = 0; x < s.w; ++x) {
                const int x0 = std::max(0, x - r), x1 = std::min(s.w, x + r + 1);
                const double box = I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0);
                w[y * s.w + x] = static_cast<T>(1.0 + 5.0 * std::abs(box / area - g[y * s.w + x]));
            }
        }
    }
    return out;
}

namespace detail {

template <typename T>
void check_loss_operands(const char* op, const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>& weights) {
    require_same_shape(op, logits, target);
    require_same_shape(op, logits, weights);
    if (logits.shape().c != 1) throw ShapeError(std::string(op) + ": expected single-channel logits");
}

}  // namespace detail

// Batch mean of sum(w * BCE(sigmoid(s), g)) / sum(w), evaluated from logits.
template <typename T>
Tensor<T> weighted_bce(Tape<T>& tape, const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>& weights) {
    detail::check_loss_operands("weighted_bce", logits, target, weights);
    const Shape s = logits.shape();
    const std::size_t plane = s.plane();
    double total = 0;
    std::vector<double> wsum(static_cast<std::size_t>(s.n));
    for (int n = 0; n < s.n; ++n) {
        double num = 0, den = 0;
        for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
            const double x = logits.data()[i];
            const double g = target.data()[i];
            const double w = weights.data()[i];
            num += w * (std::max(x, 0.0) - x * g + std::log1p(std::exp(-std::abs(x))));
            den += w;
        }
        wsum[static_cast<std::size_t>(n)] = den;
        total += num / den;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / s.n));
    if (tape.wants(logits)) {
        out.set_requires_grad(true);
        tape.record([xn = logits.node(), gn = target.node(), wn = weights.node(), on = out.node(),
                     wsum = std::move(wsum)] {
            const Shape s = xn->shape;
            const std::size_t plane = s.plane();
            const double up = on->grad[0] / s.n;
            for (int n = 0; n < s.n; ++n) {
                const double k = up / wsum[static_cast<std::size_t>(n)];
                for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
                    const double p = detail::stable_sigmoid(static_cast<double>(xn->value[i]));
                    xn->grad[i] += static_cast<T>(k * wn->value[i] * (p - gn->value[i]));
                }
            }
        });
    }
    return out;
}

// Batch mean of 1 - sum(w p g) / sum(w (p + g - p g)) with p = sigmoid(s).
template <typename T>
Tensor<T> weighted_iou(Tape<T>& tape, const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>& weights) {
    detail::check_loss_operands("weighted_iou", logits, target, weights);
    const Shape s = logits.shape();
    const std::size_t plane = s.plane();
    std::vector<double> inter(static_cast<std::size_t>(s.n)), uni(static_cast<std::size_t>(s.n));
    double total = 0;
    for (int n = 0; n < s.n; ++n) {
        double a = 0, b = 0;
        for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
            const double p = detail::stable_sigmoid(static_cast<double>(logits.data()[i]));
            const double g = target.data()[i];
            const double w = weights.data()[i];
            a += w * p * g;
            b += w * (p + g - p * g);
        }
        inter[static_cast<std::size_t>(n)] = a;
        uni[static_cast<std::size_t>(n)] = b;
        total += 1.0 - a / b;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / s.n));
    if (tape.wants(logits)) {
        out.set_requires_grad(true);
        tape.record([xn = logits.node(), gn = target.node(), wn = weights.node(), on = out.node(),
                     inter = std::move(inter), uni = std::move(uni)] {
            const Shape s = xn->shape;
            const std::size_t plane = s.plane();
            const double up = on->grad[0] / s.n;
            for (int n = 0; n < s.n; ++n) {
                const double a = inter[static_cast<std::size_t>(n)];
                const double b = uni[static_cast<std::size_t>(n)];
                for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
                    const double p = detail::stable_sigmoid(static_cast<double>(xn->value[i]));
                    const double g = gn->value[i];
                    const double w = wn->value[i];
                    // d(1 - a/b)/dp = -(w g b - a w (1 - g)) / b^2
                    const double dp = -(w * g * b - a * w * (1.0 - g)) / (b * b);
                    xn->grad[i] += static_cast<T>(up * dp * p * (1.0 - p));
                }
            }
        });
    }
    return out;
}

// Boundary-weighted BCE + IoU against a binary mask.
template <typename T>
Tensor<T> seg_loss(Tape<T>& tape, const Tensor<T>& logits, const Tensor<T>& mask) {
    require_binary("seg_loss: mask", mask);
    const auto w = boundary_weights(mask, boundary_kernel_size(mask.shape().h));
    return add(tape, weighted_bce(tape, logits, mask, w), weighted_iou(tape, logits, mask, w));
}

}  // namespace efanet
