#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "efanet/ops.hpp"

namespace efanet {

// Named parameters (trainable) and buffers (BN running statistics) in
// creation order. While open, a lookup of an unknown name creates the entry
// with its initial value; once frozen, unknown names are an error. Every
// lookup checks the stored shape.
template <typename T>
class ParamStore {
   public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    // Uniform(-b, b) with b = sqrt(1 / fan_in).
    static double init_bound(int cin, int kh, int kw) { return std::sqrt(1.0 / (static_cast<double>(cin) * kh * kw)); }

    Tensor<T> conv_weight(const std::string& name, int cout, int cin, int kh, int kw) {
        const Shape shape{cout, cin, kh, kw};
        if (auto* t = lookup(params_, param_index_, name, shape)) return *t;
        Tensor<T> w(shape);
        std::uniform_real_distribution<double> dist(-init_bound(cin, kh, kw), init_bound(cin, kh, kw));
        for (auto& v : w.data()) v = static_cast<T>(dist(rng_));
        return add_param(name, std::move(w));
    }

    Tensor<T> bias(const std::string& name, int cout) {
        return constant_param(name, Shape{1, cout, 1, 1}, T(0));
    }

    Tensor<T> bn_gamma(const std::string& name, int c) { return constant_param(name + ".gamma", Shape{1, c, 1, 1}, T(1)); }
    Tensor<T> bn_beta(const std::string& name, int c) { return constant_param(name + ".beta", Shape{1, c, 1, 1}, T(0)); }

    BatchNormStats<T> bn_stats(const std::string& name, int c) {
        return {buffer(name + ".running_mean", c, T(0)), buffer(name + ".running_var", c, T(1))};
    }

    std::vector<Entry>& named_parameters() { return params_; }
    const std::vector<Entry>& named_parameters() const { return params_; }
    std::vector<Entry>& named_buffers() { return buffers_; }
    const std::vector<Entry>& named_buffers() const { return buffers_; }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        out.reserve(params_.size());
        for (const auto& e : params_) out.push_back(e.tensor);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const auto& e : params_) total += e.tensor.numel();
        return total;
    }

    Tensor<T>* find(const std::string& name) {
        if (auto it = param_index_.find(name); it != param_index_.end()) return &params_[it->second].tensor;
        if (auto it = buffer_index_.find(name); it != buffer_index_.end()) return &buffers_[it->second].tensor;
        return nullptr;
    }

    void zero_grad() {
        for (auto& e : params_) e.tensor.zero_grad();
    }

   private:
    Tensor<T>* lookup(std::vector<Entry>& entries, std::unordered_map<std::string, std::size_t>& index,
                      const std::string& name, const Shape& shape) {
        auto it = index.find(name);
        if (it == index.end()) {
            if (frozen_) throw ShapeError("parameter store: unknown tensor '" + name + "'");
            return nullptr;
        }
        Tensor<T>& t = entries[it->second].tensor;
        if (t.shape() != shape) {
            throw ShapeError("parameter store: tensor '" + name + "' has shape " + to_string(t.shape()) +
                             ", expected " + to_string(shape));
        }
        return &t;
    }

    Tensor<T> add_param(const std::string& name, Tensor<T> t) {
        t.set_requires_grad(true);
        param_index_.emplace(name, params_.size());
        params_.push_back({name, std::move(t)});
        return params_.back().tensor;
    }

    Tensor<T> constant_param(const std::string& name, Shape shape, T fill) {
        if (auto* t = lookup(params_, param_index_, name, shape)) return *t;
        return add_param(name, Tensor<T>(shape, fill));
    }

    Tensor<T> buffer(const std::string& name, int c, T fill) {
        const Shape shape{1, c, 1, 1};
        if (auto* t = lookup(buffers_, buffer_index_, name, shape)) return *t;
        buffer_index_.emplace(name, buffers_.size());
        buffers_.push_back({name, Tensor<T>(shape, fill)});
        return buffers_.back().tensor;
    }

    std::mt19937_64 rng_;
    bool frozen_ = false;
    std::vector<Entry> params_;
    std::vector<Entry> buffers_;
    std::unordered_map<std::string, std::size_t> param_index_;
    std::unordered_map<std::string, std::size_t> buffer_index_;
};

// What a forward pass needs besides its inputs.
template <typename T>
struct Context {
    Tape<T>& tape;
    ParamStore<T>& params;
    Mode mode = Mode::eval;
};

struct ConvSpec {
    int out_channels;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;

    // "same" padding for odd kernels at stride 1.
    int padding() const { return dilation * (kernel - 1) / 2; }
};

template <typename T>
Tensor<T> conv(Context<T>& ctx, const std::string& name, const Tensor<T>& x, ConvSpec spec) {
    auto w = ctx.params.conv_weight(name + ".weight", spec.out_channels, x.shape().c, spec.kernel, spec.kernel);
    auto b = ctx.params.bias(name + ".bias", spec.out_channels);
    return conv2d(ctx.tape, x, w, b, Conv2dOptions{spec.stride, spec.padding(), spec.dilation});
}

template <typename T>
Tensor<T> bn(Context<T>& ctx, const std::string& name, const Tensor<T>& x) {
    const int c = x.shape().c;
    auto gamma = ctx.params.bn_gamma(name, c);
    auto beta = ctx.params.bn_beta(name, c);
    auto stats = ctx.params.bn_stats(name, c);
    return batch_norm(ctx.tape, x, gamma, beta, stats, ctx.mode);
}

// Conv -> BN -> ReLU.
template <typename T>
Tensor<T> conv_bn_relu(Context<T>& ctx, const std::string& name, const Tensor<T>& x, ConvSpec spec) {
    auto y = conv(ctx, name + ".conv", x, spec);
    y = bn(ctx, name + ".bn", y);
    return relu(ctx.tape, y);
}

}  // namespace efanet
