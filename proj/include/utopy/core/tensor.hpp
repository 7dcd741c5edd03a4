#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "utopy/core/error.hpp"

namespace utopy {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major array. Value semantics; ops never mutate their inputs.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        UTOPY_REQUIRE(shape_numel(shape_) == data_.size(),
                      "tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const {
        UTOPY_REQUIRE(i < shape_.size(), "dim index out of range for shape " + shape_str(shape_));
        return shape_[i];
    }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty() && shape_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T item() const {
        UTOPY_REQUIRE(data_.size() == 1, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    /// Elements of batch entry b, treating dim 0 as the batch axis.
    std::span<T> sample(std::size_t b) {
        const std::size_t per = per_sample();
        return std::span<T>(data_).subspan(b * per, per);
    }
    std::span<const T> sample(std::size_t b) const {
        const std::size_t per = per_sample();
        return std::span<const T>(data_).subspan(b * per, per);
    }
    std::size_t per_sample() const {
        UTOPY_REQUIRE(!shape_.empty() && shape_[0] > 0, "tensor has no batch axis");
        return data_.size() / shape_[0];
    }

    Tensor reshaped(Shape shape) const {
        UTOPY_REQUIRE(shape_numel(shape) == data_.size(),
                      "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const noexcept {
        if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
            // Non-finite exactly when every exponent bit is set.
            using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
            constexpr Bits exp_mask = std::is_same_v<T, float> ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
            Bits bad = 0;
            for (const T v : data_) bad |= Bits((std::bit_cast<Bits>(v) & exp_mask) == exp_mask);
            return bad == 0;
        } else {
            return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
        }
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Bitwise equality of shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ &&
               (a.data_.empty() ||
                std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(T)) == 0);
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    UTOPY_REQUIRE(a == b, std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    UTOPY_REQUIRE(a.numel() == b.numel(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <class T>
double l2_norm(std::span<const T> v) {
    double s = 0.0;
    for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

template <class T>
double l2_norm(const Tensor<T>& a) {
    return l2_norm(a.values());
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "tensor +");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "tensor -");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = s * a[i];
    return out;
}

/// a += s * b
template <class T>
void axpy(Tensor<T>& a, T s, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "axpy");
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += s * b[i];
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

/// Select batch entries by index along dim 0.
template <class T>
Tensor<T> gather_batch(const Tensor<T>& src, std::span<const std::size_t> idx) {
    Shape shape = src.shape();
    const std::size_t per = src.per_sample();
    shape[0] = idx.size();
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        UTOPY_REQUIRE(idx[i] < src.dim(0), "gather_batch: index out of range");
        std::copy_n(src.data() + idx[i] * per, per, out.data() + i * per);
    }
    return out;
}

/// Contiguous batch range [begin, end).
template <class T>
Tensor<T> slice_batch(const Tensor<T>& src, std::size_t begin, std::size_t end) {
    UTOPY_REQUIRE(begin <= end && end <= src.dim(0), "slice_batch: bad range");
    Shape shape = src.shape();
    const std::size_t per = src.per_sample();
    shape[0] = end - begin;
    std::vector<T> data(src.data() + begin * per, src.data() + end * per);
    return Tensor<T>(shape, std::move(data));
}

} // namespace utopy
