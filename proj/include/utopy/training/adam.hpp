#pragma once

#include <cmath>
#include <vector>

#include "utopy/core/tensor.hpp"

namespace utopy {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    long step = 0;
};

/// One bias-corrected Adam step. Moments are kept in the parameter type;
/// the update arithmetic runs in double.
template <class T>
void adam_update(AdamState<T>& state, const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
                 double lr, const AdamConfig& cfg = {}) {
    UTOPY_REQUIRE(params.size() == grads.size(), "adam: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    UTOPY_REQUIRE(state.m.size() == params.size(), "adam: state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        const auto& g = grads[i];
        require_same_shape(p.shape(), g.shape(), "adam");
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
        }
    }
}

} // namespace utopy
