#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "efanet/tensor.hpp"

namespace efanet {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamOptions options;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;  // first moments, one per parameter
    std::vector<std::vector<T>> v;  // second moments

    explicit AdamState(AdamOptions opt = {}) : options(opt) {}
};

// One bias-corrected Adam update over params (in order), then clears grads.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad()) {
            throw ShapeError("adam_step: parameter " + std::to_string(i) + " has no gradient buffer");
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), T(0));
            state.v.emplace_back(p.numel(), T(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: optimizer tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
    }
    ++state.step;
    const AdamOptions& o = state.options;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.numel()) {
            throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(i));
        }
        auto val = p.data();
        auto g = p.grad();
        for (std::size_t j = 0; j < val.size(); ++j) {
            const double gj = g[j];
            m[j] = static_cast<T>(o.beta1 * m[j] + (1.0 - o.beta1) * gj);
            v[j] = static_cast<T>(o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj);
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            val[j] = static_cast<T>(val[j] - o.lr * mhat / (std::sqrt(vhat) + o.eps));
        }
        p.zero_grad();
    }
}

}  // namespace efanet
