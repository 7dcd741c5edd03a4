#pragma once

#include <cmath>
#include <limits>

#include "utopy/core/rng.hpp"
#include "utopy/operators/linear_operator.hpp"

namespace utopy {

/// y + e with e ~ N(0, s^2 I) drawn per measurement vector (per leading
/// index), s^2 = ||y_b||^2 / (len * 10^(snr_db / 10)). snr_db = +inf
/// returns y unchanged.
template <class T>
Tensor<T> add_awgn(const Tensor<T>& y, double snr_db, Rng& rng) {
    UTOPY_REQUIRE(!std::isnan(snr_db), "add_awgn: snr_db is NaN");
    UTOPY_REQUIRE(y.rank() >= 1 && y.numel() > 0, "add_awgn: empty measurement");
    if (snr_db == std::numeric_limits<double>::infinity()) return y;
    Tensor<T> out = y;
    const std::size_t B = y.rank() == 1 ? 1 : y.dim(0), len = y.numel() / B;
    for (std::size_t b = 0; b < B; ++b) {
        const double energy = l2_norm(std::span<const T>(y.data() + b * len, len));
        UTOPY_REQUIRE(energy > 0.0, "add_awgn: zero measurement vector, SNR undefined");
        const double sigma = energy / std::sqrt(static_cast<double>(len) * std::pow(10.0, snr_db / 10.0));
        for (std::size_t i = 0; i < len; ++i) out[b * len + i] += static_cast<T>(sigma * rng.normal());
    }
    return out;
}

/// 10 log10(||clean||^2 / ||noisy - clean||^2).
template <class T>
double measured_snr_db(const Tensor<T>& clean, const Tensor<T>& noisy) {
    require_same_shape(clean.shape(), noisy.shape(), "measured_snr_db");
    double s = 0.0, e = 0.0;
    for (std::size_t i = 0; i < clean.numel(); ++i) {
        const double c = clean[i], d = static_cast<double>(noisy[i]) - c;
        s += c * c;
        e += d * d;
    }
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(s / e);
}

/// Measurements of a batch of images, noise seeded per sample: sample i
/// always draws from rng.split(first_index + i).
template <class T>
Tensor<T> simulate_measurements(const LinearOperator& H, const Tensor<T>& x, double snr_db, const Rng& rng,
                                std::size_t first_index = 0) {
    Tensor<T> y = H.apply(x);
    if (snr_db == std::numeric_limits<double>::infinity()) return y;
    const std::size_t len = y.per_sample();
    for (std::size_t b = 0; b < y.dim(0); ++b) {
        Rng r = rng.split(first_index + b);
        Tensor<T> row({1, len}, std::vector<T>(y.data() + b * len, y.data() + (b + 1) * len));
        row = add_awgn(row, snr_db, r);
        std::copy_n(row.data(), len, y.data() + b * len);
    }
    return y;
}

} // namespace utopy
