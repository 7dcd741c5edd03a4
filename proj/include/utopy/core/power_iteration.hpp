#pragma once

#include <cmath>

#include "utopy/core/rng.hpp"
#include "utopy/core/tensor.hpp"

namespace utopy {

struct SpectralEstimate {
    double sigma = 0.0;    // largest singular value estimate
    int iterations = 0;
    bool converged = false;
    bool zero_operator = false;
};

/// Largest singular value of a linear map A via power iteration on A^T A.
/// `apply` maps a tensor of shape `dim` to A x; `adjoint` maps back.
/// The estimate ||A v|| with ||v|| = 1 never exceeds the true norm.
template <class T, class Apply, class Adjoint>
SpectralEstimate power_iteration(Apply&& apply, Adjoint&& adjoint, const Shape& dim, int iters, double tol, Rng& rng) {
    UTOPY_REQUIRE(iters >= 1, "power_iteration: iters must be >= 1");
    SpectralEstimate est;
    Tensor<T> v = rng.normal_tensor<T>(dim);
    double nv = l2_norm(v);
    if (nv == 0.0) v.fill(T(1)), nv = l2_norm(v);
    v = static_cast<T>(1.0 / nv) * v;
    double prev = -1.0;
    for (int it = 1; it <= iters; ++it) {
        Tensor<T> u = apply(v);
        const double sigma = l2_norm(u);
        est.iterations = it;
        if (sigma == 0.0) {
            est.sigma = 0.0;
            est.zero_operator = true;
            est.converged = true;
            return est;
        }
        est.sigma = sigma;
        if (prev >= 0.0 && std::abs(sigma - prev) < tol * sigma) {
            est.converged = true;
            return est;
        }
        prev = sigma;
        Tensor<T> w = adjoint(u);
        const double nw = l2_norm(w);
        if (nw == 0.0) {
            est.converged = true;
            return est;
        }
        v = static_cast<T>(1.0 / nw) * w;
    }
    return est;
}

} // namespace utopy
