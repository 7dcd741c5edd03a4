#pragma once

#include "utopy/data/metrics.hpp"

namespace utopy {

struct LossWeights {
    double l1 = 0.8;
    double ssim = 0.2;
    double freq = 0.02;
    double inner_radius = 0.25; // high-pass mask keeps radius >= inner_radius * Nyquist

    void validate() const {
        UTOPY_REQUIRE(l1 >= 0.0 && ssim >= 0.0 && freq >= 0.0, "loss weights must be >= 0");
        UTOPY_REQUIRE(inner_radius >= 0.0, "loss: inner radius must be >= 0");
    }
};

/// Binary mask over unshifted DFT bins of an h x w plane: 1 where the
/// centred radius, in units of the Nyquist frequency, is >= r0.
template <class T>
Tensor<T> highpass_mask(std::size_t h, std::size_t w, double r0) {
    Tensor<T> m({h, w});
    auto centred = [](std::size_t k, std::size_t n) {
        const double f = static_cast<double>(k) - (k > n / 2 ? static_cast<double>(n) : 0.0);
        return f / (0.5 * static_cast<double>(n));
    };
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double fy = centred(i, h), fx = centred(j, w);
            m[i * w + j] = std::sqrt(fy * fy + fx * fx) >= r0 ? T(1) : T(0);
        }
    return m;
}

/// w_l1 * mean|a - b| + w_ssim * (1 - SSIM(a, b))
///   + w_freq * mean over the batch of ||mask * |F(a - b)| ||_2,
/// F the unitary 2-D DFT. Inputs are NCHW.
template <class T>
Var<T> composite_loss(Var<T> a, Var<T> b, const LossWeights& w = {}) {
    w.validate();
    require_same_shape(a.shape(), b.shape(), "composite_loss");
    UTOPY_REQUIRE(a.value().rank() == 4, "composite_loss: needs NCHW images");
    Tape<T>& tape = *a.tape();
    auto diff = ops::sub(a, b);
    Var<T> total = tape.constant(Tensor<T>::scalar(T(0)));
    if (w.l1 > 0.0) total = ops::add(total, ops::scale(ops::mean(ops::abs(diff)), static_cast<T>(w.l1)));
    if (w.ssim > 0.0) {
        auto one_minus = ops::add_scalar(ops::scale(ssim_node(a, b), T(-1)), T(1));
        total = ops::add(total, ops::scale(one_minus, static_cast<T>(w.ssim)));
    }
    if (w.freq > 0.0) {
        const Shape s = a.shape();
        const Tensor<T> plane = highpass_mask<T>(s[2], s[3], w.inner_radius);
        Tensor<T> mask(s);
        for (std::size_t p = 0; p < s[0] * s[1]; ++p) std::copy_n(plane.data(), plane.numel(), mask.data() + p * plane.numel());
        auto spec = ops::mul(ops::fft2_abs(diff), tape.constant(std::move(mask)));
        auto norms = ops::sqrt(ops::sum_per_sample(ops::square(spec)));
        total = ops::add(total, ops::scale(ops::mean(norms), static_cast<T>(w.freq)));
    }
    return total;
}

template <class T>
double composite_loss_value(const Tensor<T>& a, const Tensor<T>& b, const LossWeights& w = {}) {
    Tape<T> t;
    return static_cast<double>(composite_loss(t.constant(a), t.constant(b), w).value().item());
}

} // namespace utopy
