#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

#include "utopy/core/tensor.hpp"

namespace utopy {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

} // namespace detail

/// Counter-based generator: draw i of stream s under seed k is a pure hash of
/// (k, s, i), so streams can be split without sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), key_(detail::mix64(seed ^ detail::mix64(stream + 0x632BE59BD9B4E019ull))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        return detail::mix64(key_ ^ detail::mix64(counter_++ * 0xD1B54A32D192ED03ull));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Independent stream derived from this one's seed and stream id.
    Rng split(std::uint64_t id) const { return Rng(seed_, detail::mix64(stream_ * 0x9E3779B97F4A7C15ull + id + 1)); }

    /// Named substream, e.g. rng.substream("noise").
    Rng substream(std::string_view name) const { return split(detail::fnv1a(name)); }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
        return p;
    }

    template <class T>
    Tensor<T> normal_tensor(Shape shape, double stddev = 1.0, double mean = 0.0) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.values()) v = static_cast<T>(mean + stddev * normal());
        return t;
    }

    template <class T>
    Tensor<T> uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.values()) v = static_cast<T>(uniform(lo, hi));
        return t;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace utopy
