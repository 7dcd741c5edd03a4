#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "utopy/core/autodiff.hpp"
#include "utopy/core/rng.hpp"

namespace utopy {

/// Builds a scalar node from parameter nodes bound on the given tape.
template <class T>
using ScalarGraph = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<double> per_param;
};

/// Compares reverse-mode gradients against central differences.
/// The error for each parameter tensor is ||analytic - numeric|| /
/// (||analytic|| + eps_mach) over the probed entries; `max_entries` > 0
/// probes a seeded random subset of each tensor.
template <class T>
GradCheckResult finite_diff_check(const ScalarGraph<T>& f, std::vector<Tensor<T>> params, T step,
                                  std::size_t max_entries = 0, std::uint64_t seed = 0) {
    UTOPY_REQUIRE(step > T(0), "finite_diff_check: step must be positive");
    auto evaluate = [&](const std::vector<Tensor<T>>& ps) {
        Tape<T> tape;
        std::vector<Var<T>> vars;
        for (const auto& p : ps) vars.push_back(tape.constant(p));
        const T v = f(tape, vars).value().item();
        if (!std::isfinite(v)) throw NumericFailure("finite_diff_check: objective is not finite");
        return static_cast<double>(v);
    };

    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var<T> root = f(tape, vars);
    if (!std::isfinite(root.value().item())) throw NumericFailure("finite_diff_check: objective is not finite");
    auto grads = tape.backward(root);

    Rng rng(seed, 0x67726164);
    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::size_t n = params[pi].numel();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (max_entries > 0 && max_entries < n) {
            auto perm = rng.permutation(n);
            idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(max_entries));
        }
        const auto it = grads.find(vars[pi].id());
        double diff2 = 0.0, ref2 = 0.0;
        for (std::size_t i : idx) {
            const double analytic = it == grads.end() ? 0.0 : static_cast<double>(it->second[i]);
            auto plus = params;
            auto minus = params;
            plus[pi][i] += step;
            minus[pi][i] -= step;
            const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * static_cast<double>(step));
            diff2 += (analytic - numeric) * (analytic - numeric);
            ref2 += analytic * analytic;
        }
        const double err = std::sqrt(diff2) / (std::sqrt(ref2) + std::numeric_limits<double>::epsilon());
        result.per_param.push_back(err);
        result.max_rel_error = std::max(result.max_rel_error, err);
    }
    return result;
}

} // namespace utopy
