#pragma once

// Classical FISTA for 0.5||Hx - y||^2 + lambda ||W x||_1 with W an
// orthonormal multi-level 2-D Haar transform, so prox is soft-thresholding
// in the Haar domain. Monotone variant: the iterate only moves when the
// objective does not increase.

#include <cmath>
#include <numbers>
#include <vector>

#include "utopy/core/power_iteration.hpp"
#include "utopy/operators/linear_operator.hpp"

namespace utopy {

inline double soft_threshold(double v, double lambda) {
    if (v > lambda) return v - lambda;
    if (v < -lambda) return v + lambda;
    return 0.0;
}

/// In-place orthonormal Haar analysis of one side x side image over
/// log2(side) levels.
template <class T>
void haar2d_inplace(std::span<T> img, std::size_t side) {
    UTOPY_REQUIRE(is_power_of_two(side) && img.size() == side * side, "haar2d: need a square power-of-two image");
    const T h = static_cast<T>(std::numbers::sqrt2 / 2);
    std::vector<T> tmp(side);
    for (std::size_t s = side; s > 1; s >>= 1) {
        const std::size_t half = s / 2;
        for (std::size_t r = 0; r < s; ++r) {
            T* row = img.data() + r * side;
            for (std::size_t i = 0; i < half; ++i) {
                tmp[i] = h * (row[2 * i] + row[2 * i + 1]);
                tmp[half + i] = h * (row[2 * i] - row[2 * i + 1]);
            }
            std::copy_n(tmp.begin(), s, row);
        }
        for (std::size_t c = 0; c < s; ++c) {
            for (std::size_t i = 0; i < half; ++i) {
                const T a = img[(2 * i) * side + c], b = img[(2 * i + 1) * side + c];
                tmp[i] = h * (a + b);
                tmp[half + i] = h * (a - b);
            }
            for (std::size_t i = 0; i < s; ++i) img[i * side + c] = tmp[i];
        }
    }
}

/// Inverse (= transpose) of haar2d_inplace.
template <class T>
void ihaar2d_inplace(std::span<T> img, std::size_t side) {
    UTOPY_REQUIRE(is_power_of_two(side) && img.size() == side * side, "haar2d: need a square power-of-two image");
    const T h = static_cast<T>(std::numbers::sqrt2 / 2);
    std::vector<T> tmp(side);
    for (std::size_t s = 2; s <= side; s <<= 1) {
        const std::size_t half = s / 2;
        for (std::size_t c = 0; c < s; ++c) {
            for (std::size_t i = 0; i < half; ++i) {
                const T a = img[i * side + c], d = img[(half + i) * side + c];
                tmp[2 * i] = h * (a + d);
                tmp[2 * i + 1] = h * (a - d);
            }
            for (std::size_t i = 0; i < s; ++i) img[i * side + c] = tmp[i];
        }
        for (std::size_t r = 0; r < s; ++r) {
            T* row = img.data() + r * side;
            for (std::size_t i = 0; i < half; ++i) {
                tmp[2 * i] = h * (row[i] + row[half + i]);
                tmp[2 * i + 1] = h * (row[i] - row[half + i]);
            }
            std::copy_n(tmp.begin(), s, row);
        }
    }
}

/// Haar transform of every [.., side, side] image in a batch.
template <class T>
Tensor<T> haar2d(const Tensor<T>& x, bool inverse = false) {
    UTOPY_REQUIRE(x.rank() >= 2 && x.dim(x.rank() - 1) == x.dim(x.rank() - 2), "haar2d: need square trailing axes");
    const std::size_t side = x.dim(x.rank() - 1), plane = side * side;
    Tensor<T> out = x;
    for (std::size_t p = 0; p < out.numel() / plane; ++p) {
        auto s = out.values().subspan(p * plane, plane);
        inverse ? ihaar2d_inplace(s, side) : haar2d_inplace(s, side);
    }
    return out;
}

struct FistaOptions {
    double lipschitz = 0.0; // 0: estimate ||H^T H|| by power iteration
    bool monotone = true;
    double divergence_factor = 10.0;
};

template <class T>
struct FistaResult {
    Tensor<T> x;
    std::vector<double> objective; // F(x_k), k = 0..iters
    double lipschitz = 0.0;
};

template <class T>
double fista_objective(const LinearOperator& H, const Tensor<T>& y, const Tensor<T>& x, double lambda) {
    const Tensor<T> r = H.apply(x) - y;
    double f = 0.5 * dot(r, r);
    if (lambda > 0.0)
        for (T c : haar2d(x).values()) f += lambda * std::abs(static_cast<double>(c));
    return f;
}

/// Starts from x = 0. Returns the last iterate with the objective history.
template <class T>
FistaResult<T> fista_classical(const LinearOperator& H, const Tensor<T>& y, double lambda, int iters,
                               const FistaOptions& opt = {}) {
    UTOPY_REQUIRE(lambda >= 0.0, "fista: lambda must be >= 0");
    UTOPY_REQUIRE(iters >= 1, "fista: iters must be >= 1");
    UTOPY_REQUIRE(y.rank() >= 1 && y.per_sample() == H.out_size(), "fista: y does not match H output");
    Shape xs{y.dim(0)};
    xs.insert(xs.end(), H.in_shape().begin(), H.in_shape().end());

    FistaResult<T> res;
    res.lipschitz = opt.lipschitz;
    if (res.lipschitz <= 0.0) {
        Rng rng(0, 0x6669737461);
        Shape one = xs;
        one[0] = 1;
        auto normal = [&H](const Tensor<T>& v) { return H.normal(v); };
        res.lipschitz = power_iteration<T>(normal, normal, one, 1000, 1e-10, rng).sigma;
    }
    UTOPY_REQUIRE(res.lipschitz > 0.0, "fista: zero operator");
    const T step = static_cast<T>(1.0 / res.lipschitz);
    const T thr = static_cast<T>(lambda / res.lipschitz);

    auto prox = [&](const Tensor<T>& v) {
        if (lambda == 0.0) return v;
        Tensor<T> c = haar2d(v);
        for (auto& e : c.values()) e = static_cast<T>(soft_threshold(e, thr));
        return haar2d(c, true);
    };

    Tensor<T> x(xs), w = x;
    double fx = fista_objective(H, y, x, lambda);
    const double f0 = fx;
    res.objective.push_back(fx);
    double t = 1.0;
    for (int k = 0; k < iters; ++k) {
        Tensor<T> g = H.adjoint(H.apply(w) - y);
        Tensor<T> u = prox(w - step * g);
        const double fu = fista_objective(H, y, u, lambda);
        if (!std::isfinite(fu) || fu > opt.divergence_factor * std::max(f0, 1e-300))
            throw NumericFailure("fista: diverged at iteration " + std::to_string(k + 1));
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        Tensor<T> x_next = (!opt.monotone || fu <= fx) ? u : x;
        const double f_next = (!opt.monotone || fu <= fx) ? fu : fx;
        // w = x_next + (t/t_next)(u - x_next) + ((t-1)/t_next)(x_next - x)
        w = x_next;
        axpy(w, static_cast<T>(t / t_next), u - x_next);
        axpy(w, static_cast<T>((t - 1.0) / t_next), x_next - x);
        x = std::move(x_next);
        fx = f_next;
        t = t_next;
        res.objective.push_back(fx);
    }
    res.x = std::move(x);
    return res;
}

} // namespace utopy
