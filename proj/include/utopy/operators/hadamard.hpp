#pragma once

#include <bit>
#include <cmath>
#include <span>

#include "utopy/core/tensor.hpp"

namespace utopy {

inline bool is_power_of_two(std::size_t n) { return n > 0 && std::has_single_bit(n); }

/// In-place orthonormal fast Walsh-Hadamard transform (Sylvester ordering).
/// The transform is symmetric and its own inverse.
template <class T>
void fwht_inplace(std::span<T> x) {
    const std::size_t n = x.size();
    UTOPY_REQUIRE(is_power_of_two(n), "fwht: length " + std::to_string(n) + " is not a power of two");
    for (std::size_t h = 1; h < n; h <<= 1) {
        for (std::size_t i = 0; i < n; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                const T a = x[j], b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
    }
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(n)));
    for (auto& v : x) v *= s;
}

template <class T>
Tensor<T> fwht(const Tensor<T>& x) {
    Tensor<T> out = x;
    fwht_inplace(out.values());
    return out;
}

} // namespace utopy
