#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "utopy/core/rng.hpp"
#include "utopy/operators/linear_operator.hpp"

namespace utopy {

/// Compressed-sensing design: H keeps m = round(ratio * n) Hadamard rows,
/// H_t keeps those plus round(eta * n) more.
struct CsDesign {
    std::size_t side = 32;
    double ratio = 0.3;   // m / n
    double eta = 0.0;     // augmented ratio
    std::uint64_t seed = 0;

    std::size_t n() const { return side * side; }
    std::size_t m() const { return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n()))); }
    std::size_t m_t() const { return m() + static_cast<std::size_t>(std::llround(eta * static_cast<double>(n()))); }
};

/// Target and synthetic Gaussian blurs; sigma_t < sigma.
struct BlurDesign {
    std::size_t side = 32;
    double sigma = 5.0;
    double sigma_t = 3.0;
};

struct OperatorPair {
    LinearOperator H;
    LinearOperator H_t;
};

/// Row order: DC first, then a seeded permutation of the remaining rows.
/// H takes the first m, H_t the first m_t, so rows(H) is a prefix of rows(H_t).
inline OperatorPair make_cs_pair(const CsDesign& d) {
    UTOPY_REQUIRE(d.ratio > 0.0 && d.ratio <= 1.0, "cs design: m/n must lie in (0, 1]");
    UTOPY_REQUIRE(d.eta >= 0.0 && d.eta < 1.0, "cs design: eta must lie in [0, 1)");
    const std::size_t n = d.n(), m = d.m(), mt = d.m_t();
    UTOPY_REQUIRE(m >= 1, "cs design: m must be at least 1");
    UTOPY_REQUIRE(mt >= m && mt <= n, "cs design: need m <= m_t <= n (m=" + std::to_string(m) +
                                          ", m_t=" + std::to_string(mt) + ", n=" + std::to_string(n) + ")");
    Rng rng(d.seed, 0x63732d726f7773);
    auto perm = rng.permutation(n - 1);
    std::vector<std::size_t> order{0};
    order.reserve(n);
    for (auto p : perm) order.push_back(p + 1);
    std::vector<std::size_t> rows_t(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(mt));
    std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    return {LinearOperator::hadamard_cs(d.side, std::move(rows), d.seed),
            LinearOperator::hadamard_cs(d.side, std::move(rows_t), d.seed)};
}

inline OperatorPair make_blur_pair(const BlurDesign& d) {
    UTOPY_REQUIRE(d.sigma_t > 0.0 && d.sigma_t < d.sigma, "blur design: need 0 < sigma_t < sigma");
    return {LinearOperator::gaussian_blur(d.side, d.sigma), LinearOperator::gaussian_blur(d.side, d.sigma_t)};
}

} // namespace utopy
