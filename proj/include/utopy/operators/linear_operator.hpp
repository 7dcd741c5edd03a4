#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "utopy/core/tensor.hpp"
#include "utopy/operators/hadamard.hpp"

namespace utopy {

enum class OperatorKind { HadamardCs, GaussianBlur, Dense };

inline std::string to_string(OperatorKind k) {
    switch (k) {
    case OperatorKind::HadamardCs: return "hadamard-cs";
    case OperatorKind::GaussianBlur: return "gaussian-blur";
    case OperatorKind::Dense: return "dense";
    }
    return "unknown";
}

inline OperatorKind parse_operator_kind(const std::string& s) {
    if (s == "hadamard-cs") return OperatorKind::HadamardCs;
    if (s == "gaussian-blur") return OperatorKind::GaussianBlur;
    if (s == "dense") return OperatorKind::Dense;
    throw ContractViolation("unknown operator kind '" + s + "'");
}

/// Blur half-width covering three standard deviations.
inline std::size_t blur_half_width(double sigma) {
    UTOPY_REQUIRE(sigma > 0.0 && std::isfinite(sigma), "gaussian blur: sigma must be positive");
    return static_cast<std::size_t>(std::ceil(3.0 * sigma));
}

/// Truncated, renormalised 1-D Gaussian of length 2r+1.
inline std::vector<double> gaussian_kernel_1d(double sigma, std::size_t r) {
    std::vector<double> k(2 * r + 1);
    double s = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(r);
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        s += k[i];
    }
    for (auto& v : k) v /= s;
    return k;
}

/// Forward model acting on batches: input [B, in_shape...] -> [B, out_shape...].
/// Images are vectorised row-major.
class LinearOperator {
public:
    /// Rows `rows` of the orthonormal n x n Walsh-Hadamard matrix, n = side^2.
    static LinearOperator hadamard_cs(std::size_t side, std::vector<std::size_t> rows, std::uint64_t seed = 0) {
        const std::size_t n = side * side;
        UTOPY_REQUIRE(is_power_of_two(side), "hadamard-cs: image side must be a power of two");
        UTOPY_REQUIRE(!rows.empty() && rows.size() <= n, "hadamard-cs: need 1..n rows");
        std::set<std::size_t> seen;
        for (auto r : rows) {
            UTOPY_REQUIRE(r < n, "hadamard-cs: row index out of range");
            UTOPY_REQUIRE(seen.insert(r).second, "hadamard-cs: duplicate row index");
        }
        LinearOperator op;
        op.kind_ = OperatorKind::HadamardCs;
        op.side_ = side;
        op.in_shape_ = {1, side, side};
        op.out_shape_ = {rows.size()};
        op.rows_ = std::move(rows);
        op.seed_ = seed;
        return op;
    }

    static LinearOperator gaussian_blur(std::size_t side, double sigma) {
        const std::size_t r = blur_half_width(sigma);
        UTOPY_REQUIRE(2 * r + 1 <= side, "gaussian blur: kernel (" + std::to_string(2 * r + 1) +
                                              ") larger than image side " + std::to_string(side));
        LinearOperator op;
        op.kind_ = OperatorKind::GaussianBlur;
        op.side_ = side;
        op.in_shape_ = {1, side, side};
        op.out_shape_ = {1, side, side};
        op.sigma_ = sigma;
        op.half_width_ = r;
        op.kernel_ = gaussian_kernel_1d(sigma, r);
        return op;
    }

    /// Explicit m x n matrix; used for oracle tests and small problems.
    static LinearOperator dense(Tensor<double> matrix, Shape in_shape = {}) {
        UTOPY_REQUIRE(matrix.rank() == 2, "dense operator: matrix must be 2-D");
        if (in_shape.empty()) in_shape = {matrix.dim(1)};
        UTOPY_REQUIRE(shape_numel(in_shape) == matrix.dim(1), "dense operator: in_shape does not match columns");
        LinearOperator op;
        op.kind_ = OperatorKind::Dense;
        op.in_shape_ = std::move(in_shape);
        op.out_shape_ = {matrix.dim(0)};
        op.matrix_ = std::move(matrix);
        return op;
    }

    OperatorKind kind() const noexcept { return kind_; }
    const Shape& in_shape() const noexcept { return in_shape_; }
    const Shape& out_shape() const noexcept { return out_shape_; }
    std::size_t in_size() const { return shape_numel(in_shape_); }
    std::size_t out_size() const { return shape_numel(out_shape_); }
    std::size_t side() const noexcept { return side_; }
    const std::vector<std::size_t>& rows() const noexcept { return rows_; }
    std::uint64_t seed() const noexcept { return seed_; }
    double sigma() const noexcept { return sigma_; }
    std::size_t half_width() const noexcept { return half_width_; }
    const std::vector<double>& kernel() const noexcept { return kernel_; }
    const Tensor<double>& matrix() const noexcept { return matrix_; }

    template <class T>
    Tensor<T> apply(const Tensor<T>& x) const {
        const std::size_t B = batch_of(x, in_size(), "apply");
        Tensor<T> out(batched(B, out_shape_));
        for (std::size_t b = 0; b < B; ++b) forward_one(x.sample(b), out.sample(b));
        return out;
    }

    template <class T>
    Tensor<T> adjoint(const Tensor<T>& u) const {
        const std::size_t B = batch_of(u, out_size(), "adjoint");
        Tensor<T> out(batched(B, in_shape_));
        for (std::size_t b = 0; b < B; ++b) adjoint_one(u.sample(b), out.sample(b));
        return out;
    }

    /// H^T H x
    template <class T>
    Tensor<T> normal(const Tensor<T>& x) const {
        return adjoint(apply(x));
    }

private:
    LinearOperator() = default;

    static Shape batched(std::size_t B, const Shape& s) {
        Shape out{B};
        out.insert(out.end(), s.begin(), s.end());
        return out;
    }

    template <class T>
    std::size_t batch_of(const Tensor<T>& x, std::size_t per, const char* what) const {
        UTOPY_REQUIRE(x.rank() >= 1 && x.dim(0) > 0 && x.per_sample() == per,
                      std::string(to_string(kind_)) + " " + what + ": expected per-sample size " +
                          std::to_string(per) + ", got shape " + shape_str(x.shape()));
        return x.dim(0);
    }

    template <class T>
    void forward_one(std::span<const T> x, std::span<T> y) const {
        switch (kind_) {
        case OperatorKind::HadamardCs: {
            std::vector<T> buf(x.begin(), x.end());
            fwht_inplace<T>(buf);
            for (std::size_t i = 0; i < rows_.size(); ++i) y[i] = buf[rows_[i]];
            break;
        }
        case OperatorKind::GaussianBlur:
            blur_one(x, y, false);
            break;
        case OperatorKind::Dense: {
            const std::size_t m = matrix_.dim(0), n = matrix_.dim(1);
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += matrix_[i * n + j] * static_cast<double>(x[j]);
                y[i] = static_cast<T>(s);
            }
            break;
        }
        }
    }

    template <class T>
    void adjoint_one(std::span<const T> u, std::span<T> x) const {
        switch (kind_) {
        case OperatorKind::HadamardCs: {
            std::fill(x.begin(), x.end(), T(0));
            for (std::size_t i = 0; i < rows_.size(); ++i) x[rows_[i]] = u[i];
            fwht_inplace<T>(x);
            break;
        }
        case OperatorKind::GaussianBlur:
            blur_one(u, x, true);
            break;
        case OperatorKind::Dense: {
            const std::size_t m = matrix_.dim(0), n = matrix_.dim(1);
            std::vector<double> acc(n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double ui = static_cast<double>(u[i]);
                for (std::size_t j = 0; j < n; ++j) acc[j] += matrix_[i * n + j] * ui;
            }
            for (std::size_t j = 0; j < n; ++j) x[j] = static_cast<T>(acc[j]);
            break;
        }
        }
    }

    // Zero-padded separable convolution, same-size output. The adjoint is
    // correlation, i.e. convolution with the flipped kernel.
    template <class T>
    void blur_one(std::span<const T> x, std::span<T> y, bool flipped) const {
        const auto S = static_cast<std::ptrdiff_t>(side_);
        const auto r = static_cast<std::ptrdiff_t>(half_width_);
        std::vector<T> k(kernel_.size());
        for (std::size_t i = 0; i < k.size(); ++i)
            k[i] = static_cast<T>(flipped ? kernel_[kernel_.size() - 1 - i] : kernel_[i]);
        std::vector<T> tmp(side_ * side_, T(0));
        // out[i] = sum_a k[a + r] * in[i - a]
        for (std::ptrdiff_t row = 0; row < S; ++row)
            for (std::ptrdiff_t c = 0; c < S; ++c) {
                T acc = 0;
                for (std::ptrdiff_t a = -r; a <= r; ++a) {
                    const std::ptrdiff_t src = c - a;
                    if (src >= 0 && src < S) acc += k[static_cast<std::size_t>(a + r)] * x[static_cast<std::size_t>(row * S + src)];
                }
                tmp[static_cast<std::size_t>(row * S + c)] = acc;
            }
        for (std::ptrdiff_t row = 0; row < S; ++row)
            for (std::ptrdiff_t c = 0; c < S; ++c) {
                T acc = 0;
                for (std::ptrdiff_t a = -r; a <= r; ++a) {
                    const std::ptrdiff_t src = row - a;
                    if (src >= 0 && src < S) acc += k[static_cast<std::size_t>(a + r)] * tmp[static_cast<std::size_t>(src * S + c)];
                }
                y[static_cast<std::size_t>(row * S + c)] = acc;
            }
    }

    OperatorKind kind_ = OperatorKind::Dense;
    Shape in_shape_;
    Shape out_shape_;
    std::size_t side_ = 0;
    std::vector<std::size_t> rows_;
    std::uint64_t seed_ = 0;
    double sigma_ = 0.0;
    std::size_t half_width_ = 0;
    std::vector<double> kernel_;
    Tensor<double> matrix_;
};

} // namespace utopy
