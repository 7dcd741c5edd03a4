#pragma once

#include <cmath>
#include <limits>

#include "utopy/core/ops.hpp"

namespace utopy {

/// 10 log10(peak^2 / MSE) over the whole tensor; +inf when MSE = 0.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

/// Mean over the batch of per-image PSNR.
template <class T>
double mean_psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(0); ++i) s += psnr(slice_batch(a, i, i + 1), slice_batch(b, i, i + 1), peak);
    return s / static_cast<double>(a.dim(0));
}

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

template <class T>
std::vector<T> gaussian_window(std::size_t n, double sigma) {
    std::vector<double> w(n);
    double s = 0.0;
    const double c = 0.5 * static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(i) - c;
        w[i] = std::exp(-d * d / (2 * sigma * sigma));
        s += w[i];
    }
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(w[i] / s);
    return out;
}

/// Per-sample mean SSIM over valid windows, shape [B]. Symmetric in (a, b)
/// bit for bit.
template <class T>
Var<T> ssim_per_sample(Var<T> a, Var<T> b, const SsimParams& p = {}) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    UTOPY_REQUIRE(a.value().rank() == 4, "ssim: needs NCHW images");
    UTOPY_REQUIRE(a.value().dim(2) >= p.window && a.value().dim(3) >= p.window,
                  "ssim: image " + shape_str(a.shape()) + " smaller than the " + std::to_string(p.window) + "px window");
    const auto w = gaussian_window<T>(p.window, p.sigma);
    auto blur = [&w](Var<T> x) { return ops::separable_filter(x, w); };
    auto mu_a = blur(a), mu_b = blur(b);
    auto mu_aa = ops::square(mu_a), mu_bb = ops::square(mu_b), mu_ab = ops::mul(mu_a, mu_b);
    auto s_aa = ops::sub(blur(ops::square(a)), mu_aa);
    auto s_bb = ops::sub(blur(ops::square(b)), mu_bb);
    auto s_ab = ops::sub(blur(ops::mul(a, b)), mu_ab);
    const T c1 = static_cast<T>(p.c1), c2 = static_cast<T>(p.c2);
    auto num = ops::mul(ops::add_scalar(ops::scale(mu_ab, T(2)), c1), ops::add_scalar(ops::scale(s_ab, T(2)), c2));
    auto den = ops::mul(ops::add_scalar(ops::add(mu_aa, mu_bb), c1), ops::add_scalar(ops::add(s_aa, s_bb), c2));
    auto map = ops::div(num, den);
    const Shape ms = map.shape();
    const T inv = T(1) / static_cast<T>(ms[1] * ms[2] * ms[3]);
    return ops::scale(ops::sum_per_sample(map), inv);
}

/// Mean SSIM over the batch.
template <class T>
Var<T> ssim_node(Var<T> a, Var<T> b, const SsimParams& p = {}) {
    return ops::mean(ssim_per_sample(a, b, p));
}

template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
    Tape<T> t;
    return static_cast<double>(ssim_node(t.constant(a), t.constant(b), p).value().item());
}

} // namespace utopy
