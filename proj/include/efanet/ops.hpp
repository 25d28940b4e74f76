#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "efanet/tensor.hpp"

namespace efanet {

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

inline int conv_out_extent(int in, int kernel, const Conv2dOptions& o) {
    return (in + 2 * o.padding - o.dilation * (kernel - 1) - 1) / o.stride + 1;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
    int cin, h, w, kh, kw, hout, wout;
    Conv2dOptions opt;

    bool pointwise() const {
        return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
    }
    int rows() const { return cin * kh * kw; }
    int cols() const { return hout * wout; }
};

// Unfolds one sample (cin x h x w) into a (cin*kh*kw) x (hout*wout) matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const int P = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * P;
                for (int oy = 0; oy < g.hout; ++oy) {
                    const int iy = oy * g.opt.stride - g.opt.padding + ki * g.opt.dilation;
                    T* dst = row + oy * g.wout;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wout, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wout; ++ox) {
                        const int ix = ox * g.opt.stride - g.opt.padding + kj * g.opt.dilation;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds columns back into the sample.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
    const int P = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * P;
                for (int oy = 0; oy < g.hout; ++oy) {
                    const int iy = oy * g.opt.stride - g.opt.padding + ki * g.opt.dilation;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + oy * g.wout;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wout; ++ox) {
                        const int ix = ox * g.opt.stride - g.opt.padding + kj * g.opt.dilation;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

}  // namespace detail

// 2-D cross-correlation. weight is (Cout, Cin, kh, kw); bias may be an
// undefined tensor or hold Cout values.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt = {}) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) {
        throw ShapeError("conv2d: stride and dilation must be positive, padding non-negative");
    }
    if (xs.c != ws.c) {
        throw ShapeError("conv2d: input channels " + std::to_string(xs.c) + " != weight Cin " + std::to_string(ws.c));
    }
    if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " != Cout " + std::to_string(ws.n));
    }
    detail::ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, 0, 0, opt};
    g.hout = conv_out_extent(xs.h, ws.h, opt);
    g.wout = conv_out_extent(xs.w, ws.w, opt);
    if (xs.h + 2 * opt.padding < opt.dilation * (ws.h - 1) + 1 || g.hout < 1) {
        throw ShapeError("conv2d: effective kernel height " + std::to_string(opt.dilation * (ws.h - 1) + 1) +
                         " exceeds padded input height " + std::to_string(xs.h + 2 * opt.padding));
    }
    if (xs.w + 2 * opt.padding < opt.dilation * (ws.w - 1) + 1 || g.wout < 1) {
        throw ShapeError("conv2d: effective kernel width " + std::to_string(opt.dilation * (ws.w - 1) + 1) +
                         " exceeds padded input width " + std::to_string(xs.w + 2 * opt.padding));
    }

    const int cout = ws.n;
    const int K = g.rows();
    const int P = g.cols();
    Tensor<T> out(Shape{xs.n, cout, g.hout, g.wout});

    detail::AlignedVector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K) * P);
    detail::ConstMatMap<T> W(weight.data().data(), cout, K);
    for (int n = 0; n < xs.n; ++n) {
        const T* xn = x.data().data() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w;
        const T* colp = xn;
        if (!g.pointwise()) {
            detail::im2col(xn, g, col.data());
            colp = col.data();
        }
        detail::MatMap<T> Y(out.data().data() + static_cast<std::size_t>(n) * cout * P, cout, P);
        Y.noalias() = W * detail::ConstMatMap<T>(colp, K, P);
        if (bias.defined()) {
            for (int o = 0; o < cout; ++o) Y.row(o).array() += bias.data()[o];
        }
    }

    if (tape.wants(x, weight, bias)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node(), g, cout] {
            const int K = g.rows();
            const int P = g.cols();
            const int N = xn->shape.n;
            const std::size_t xstride = static_cast<std::size_t>(g.cin) * g.h * g.w;
            detail::AlignedVector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K) * P);
            detail::AlignedVector<T> dcol(static_cast<std::size_t>(K) * P);
            detail::ConstMatMap<T> W(wn->value.data(), cout, K);
            for (int n = 0; n < N; ++n) {
                detail::ConstMatMap<T> dY(on->grad.data() + static_cast<std::size_t>(n) * cout * P, cout, P);
                if (wn->requires_grad) {
                    const T* colp = xn->value.data() + n * xstride;
                    if (!g.pointwise()) {
                        detail::im2col(colp, g, col.data());
                        colp = col.data();
                    }
                    detail::MatMap<T> dW(wn->grad.data(), cout, K);
                    dW.noalias() += dY * detail::ConstMatMap<T>(colp, K, P).transpose();
                }
                if (bn && bn->requires_grad) {
                    for (int o = 0; o < cout; ++o) bn->grad[o] += dY.row(o).sum();
                }
                if (xn->requires_grad) {
                    T* dx = xn->grad.data() + n * xstride;
                    if (g.pointwise()) {
                        detail::MatMap<T>(dx, K, P).noalias() += W.transpose() * dY;
                    } else {
                        detail::MatMap<T>(dcol.data(), K, P).noalias() = W.transpose() * dY;
                        detail::col2im_add(dcol.data(), g, dx);
                    }
                }
            }
        });
    }
    return out;
}

enum class Mode { train, eval };

// Per-channel running statistics owned by the caller (updated in train mode).
template <typename T>
struct BatchNormStats {
    Tensor<T> mean;
    Tensor<T> var;
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, BatchNormOptions opt = {}) {
    const Shape s = x.shape();
    const auto C = static_cast<std::size_t>(s.c);
    if (gamma.numel() != C || beta.numel() != C) {
        throw ShapeError("batch_norm: gamma/beta length (" + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()) + ") != channels " + std::to_string(s.c));
    }
    if (stats.mean.numel() != C || stats.var.numel() != C) {
        throw ShapeError("batch_norm: running stats length != channels " + std::to_string(s.c));
    }
    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    std::vector<T> mean(C), inv_std(C);

    if (mode == Mode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            double sum = 0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = x.data().data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mu = sum / static_cast<double>(count);
            double sq = 0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = x.data().data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
            }
            const double var = sq / static_cast<double>(count);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
            const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
            auto rm = stats.mean.data();
            auto rv = stats.var.data();
            rm[c] = static_cast<T>((1.0 - opt.momentum) * rm[c] + opt.momentum * mu);
            rv[c] = static_cast<T>((1.0 - opt.momentum) * rv[c] + opt.momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = stats.mean.data()[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var.data()[c]) + opt.eps));
        }
    }

    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = x.data().data() + (n * C + c) * plane;
            T* q = out.data().data() + (n * C + c) * plane;
            const T scale = gamma.data()[c] * inv_std[c];
            const T shift = beta.data()[c];
            for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean[c]) * scale + shift;
        }
    }

    if (tape.wants(x, gamma, beta)) {
        out.set_requires_grad(true);
        const bool batch_stats = mode == Mode::train;
        tape.record([xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), mean = std::move(mean),
                     inv_std = std::move(inv_std), batch_stats] {
            const Shape s = xn->shape;
            const auto C = static_cast<std::size_t>(s.c);
            const std::size_t plane = s.plane();
            const double M = static_cast<double>(s.n) * static_cast<double>(plane);
            for (std::size_t c = 0; c < C; ++c) {
                double sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < s.n; ++n) {
                    const T* xp = xn->value.data() + (n * C + c) * plane;
                    const T* dy = on->grad.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xp[i] - mean[c]) * inv_std[c];
                    }
                }
                if (gn->requires_grad) gn->grad[c] += static_cast<T>(sum_dy_xhat);
                if (bn->requires_grad) bn->grad[c] += static_cast<T>(sum_dy);
                if (!xn->requires_grad) continue;
                const double g = gn->value[c];
                const double is = inv_std[c];
                for (int n = 0; n < s.n; ++n) {
                    const T* xp = xn->value.data() + (n * C + c) * plane;
                    const T* dy = on->grad.data() + (n * C + c) * plane;
                    T* dx = xn->grad.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        if (batch_stats) {
                            const double xhat = (xp[i] - mean[c]) * is;
                            dx[i] += static_cast<T>(g * is * (dy[i] - sum_dy / M - xhat * sum_dy_xhat / M));
                        } else {
                            dx[i] += static_cast<T>(g * is * dy[i]);
                        }
                    }
                }
            }
        });
    }
    return out;
}

enum class Activation { relu, sigmoid };

namespace detail {
template <typename T>
T stable_sigmoid(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
Tensor<T> activation(Tape<T>& tape, const Tensor<T>& x, Activation kind) {
    Tensor<T> out(x.shape());
    auto in = x.data();
    auto o = out.data();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = detail::stable_sigmoid(in[i]);
    }
    if (tape.wants(x)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), on = out.node(), kind] {
            const std::size_t size = on->value.size();
            if (kind == Activation::relu) {
                for (std::size_t i = 0; i < size; ++i)
                    if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
            } else {
                for (std::size_t i = 0; i < size; ++i) {
                    const T y = on->value[i];
                    xn->grad[i] += on->grad[i] * y * (T(1) - y);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    return activation(tape, x, Activation::relu);
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
    return activation(tape, x, Activation::sigmoid);
}

namespace detail {

struct LerpIndex {
    int lo, hi;
    double frac;
};

inline std::vector<LerpIndex> lerp_table(int in, int out, bool align_corners) {
    std::vector<LerpIndex> t(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) {
        double src;
        if (align_corners) {
            src = out > 1 ? static_cast<double>(i) * (in - 1) / (out - 1) : 0.0;
        } else {
            src = (i + 0.5) * static_cast<double>(in) / out - 0.5;
            if (src < 0) src = 0;
        }
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        t[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
    }
    return t;
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_resize(Tape<T>& tape, const Tensor<T>& x, int out_h, int out_w, bool align_corners = true) {
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("bilinear_resize: output size must be positive, got " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
    }
    const Shape s = x.shape();
    if (s.h == out_h && s.w == out_w) {
        Tensor<T> out = x.clone();
        if (tape.wants(x)) {
            out.set_requires_grad(true);
            tape.record([xn = x.node(), on = out.node()] {
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            });
        }
        return out;
    }
    const auto ty = detail::lerp_table(s.h, out_h, align_corners);
    const auto tx = detail::lerp_table(s.w, out_w, align_corners);
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data().data() + p * s.plane();
        T* dst = out.data().data() + p * static_cast<std::size_t>(out_h) * out_w;
        for (int i = 0; i < out_h; ++i) {
            const auto& ly = ty[static_cast<std::size_t>(i)];
            const T* r0 = src + static_cast<std::size_t>(ly.lo) * s.w;
            const T* r1 = src + static_cast<std::size_t>(ly.hi) * s.w;
            for (int j = 0; j < out_w; ++j) {
                const auto& lx = tx[static_cast<std::size_t>(j)];
                const double top = r0[lx.lo] * (1 - lx.frac) + r0[lx.hi] * lx.frac;
                const double bot = r1[lx.lo] * (1 - lx.frac) + r1[lx.hi] * lx.frac;
                dst[i * out_w + j] = static_cast<T>(top * (1 - ly.frac) + bot * ly.frac);
            }
        }
    }
    if (tape.wants(x)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), on = out.node(), ty, tx, out_h, out_w] {
            const Shape s = xn->shape;
            const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
            for (std::size_t p = 0; p < planes; ++p) {
                T* dsrc = xn->grad.data() + p * s.plane();
                const T* ddst = on->grad.data() + p * static_cast<std::size_t>(out_h) * out_w;
                for (int i = 0; i < out_h; ++i) {
                    const auto& ly = ty[static_cast<std::size_t>(i)];
                    T* r0 = dsrc + static_cast<std::size_t>(ly.lo) * s.w;
                    T* r1 = dsrc + static_cast<std::size_t>(ly.hi) * s.w;
                    for (int j = 0; j < out_w; ++j) {
                        const auto& lx = tx[static_cast<std::size_t>(j)];
                        const double g = ddst[i * out_w + j];
                        r0[lx.lo] += static_cast<T>(g * (1 - ly.frac) * (1 - lx.frac));
                        r0[lx.hi] += static_cast<T>(g * (1 - ly.frac) * lx.frac);
                        r1[lx.lo] += static_cast<T>(g * ly.frac * (1 - lx.frac));
                        r1[lx.hi] += static_cast<T>(g * ly.frac * lx.frac);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const Shape first = xs.front().shape();
    int channels = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Shape s = xs[i].shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError("concat_channels: input " + std::to_string(i) + " has shape " + to_string(s) +
                             ", expected N,H,W of " + to_string(first));
        }
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    const std::size_t plane = first.plane();
    for (int n = 0; n < first.n; ++n) {
        T* dst = out.data().data() + static_cast<std::size_t>(n) * channels * plane;
        for (const auto& t : xs) {
            const std::size_t block = static_cast<std::size_t>(t.shape().c) * plane;
            const T* src = t.data().data() + n * block;
            dst = std::copy(src, src + block, dst);
        }
    }
    if (tape.wants_any(xs)) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
        for (const auto& t : xs) nodes.push_back(t.node());
        tape.record([nodes = std::move(nodes), on = out.node(), channels] {
            const Shape s = on->shape;
            const std::size_t plane = s.plane();
            for (int n = 0; n < s.n; ++n) {
                const T* src = on->grad.data() + static_cast<std::size_t>(n) * channels * plane;
                for (const auto& node : nodes) {
                    const std::size_t block = static_cast<std::size_t>(node->shape.c) * plane;
                    if (node->requires_grad) {
                        T* dst = node->grad.data() + n * block;
                        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                    src += block;
                }
            }
        });
    }
    return out;
}

enum class Binary { add, mul };

namespace detail {

// y is indexed per (n, c) plane; a 1x1 spatial y repeats over the plane and a
// single-channel y repeats over channels.
struct BroadcastPlan {
    bool channel_bcast;
    bool spatial_bcast;
};

template <typename T>
BroadcastPlan broadcast_plan(const Tensor<T>& x, const Tensor<T>& y) {
    const Shape a = x.shape();
    const Shape b = y.shape();
    const bool ok_n = b.n == a.n;
    const bool ok_c = b.c == a.c || b.c == 1;
    const bool ok_sp = (b.h == a.h && b.w == a.w) || (b.h == 1 && b.w == 1);
    if (!ok_n || !ok_c || !ok_sp) {
        throw ShapeError("elementwise: cannot broadcast " + to_string(b) + " against " + to_string(a));
    }
    return {b.c != a.c, !(b.h == a.h && b.w == a.w)};
}

}  // namespace detail

// x (op) y with y broadcast over channels (C=1) and/or space (H=W=1).
template <typename T>
Tensor<T> elementwise(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y, Binary kind) {
    const auto plan = detail::broadcast_plan(x, y);
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor<T> out(s);
    auto y_offset = [plan, s, plane](int n, int c) {
        const int yc = plan.channel_bcast ? 1 : s.c;
        const std::size_t yplane = plan.spatial_bcast ? 1 : plane;
        return (static_cast<std::size_t>(n) * yc + (plan.channel_bcast ? 0 : c)) * yplane;
    };
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* xp = x.data().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            const T* yp = y.data().data() + y_offset(n, c);
            T* op = out.data().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T yv = plan.spatial_bcast ? yp[0] : yp[i];
                op[i] = kind == Binary::add ? xp[i] + yv : xp[i] * yv;
            }
        }
    }
    if (tape.wants(x, y)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), yn = y.node(), on = out.node(), plan, kind, y_offset] {
            const Shape s = xn->shape;
            const std::size_t plane = s.plane();
            for (int n = 0; n < s.n; ++n) {
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    const std::size_t yo = y_offset(n, c);
                    const T* g = on->grad.data() + base;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t yi = yo + (plan.spatial_bcast ? 0 : i);
                        if (kind == Binary::add) {
                            if (xn->requires_grad) xn->grad[base + i] += g[i];
                            if (yn->requires_grad) yn->grad[yi] += g[i];
                        } else {
                            if (xn->requires_grad) xn->grad[base + i] += g[i] * yn->value[yi];
                            if (yn->requires_grad) yn->grad[yi] += g[i] * xn->value[base + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y) {
    return elementwise(tape, x, y, Binary::add);
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y) {
    return elementwise(tape, x, y, Binary::mul);
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
    const Shape s = x.shape();
    if (s.h < 1 || s.w < 1) throw ShapeError("global_avg_pool: empty spatial extent " + to_string(s));
    const std::size_t plane = s.plane();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    for (std::size_t p = 0; p < out.numel(); ++p) {
        const T* src = x.data().data() + p * plane;
        double acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        out.data()[p] = static_cast<T>(acc / static_cast<double>(plane));
    }
    if (tape.wants(x)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), on = out.node()] {
            const std::size_t plane = xn->shape.plane();
            const T inv = T(1) / static_cast<T>(plane);
            for (std::size_t p = 0; p < on->value.size(); ++p) {
                T* dst = xn->grad.data() + p * plane;
                const T g = on->grad[p] * inv;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

// Sum of all entries as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    double acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (tape.wants(x)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), on = out.node()] {
            const T g = on->grad[0];
            for (auto& d : xn->grad) d += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * factor;
    if (tape.wants(x)) {
        out.set_requires_grad(true);
        tape.record([xn = x.node(), on = out.node(), factor] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor;
        });
    }
    return out;
}

}  // namespace efanet
