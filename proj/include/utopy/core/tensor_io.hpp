#pragma once

// UTNS container: "UTNS" | version u16 | rank u16 | dims u32[rank] | dtype u8 | payload.
// Every integer and float is little-endian. dtype 0 = f32, 1 = f64.
// A bundle is several records written back to back.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <type_traits>
#include <vector>

#include "utopy/core/tensor.hpp"

namespace utopy {

inline constexpr std::uint16_t kUtnsVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> b{};
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b.data(), b.size());
}

template <class U>
U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> b{};
    is.read(reinterpret_cast<char*>(b.data()), b.size());
    if (!is) throw ContractViolation("UTNS: truncated header");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

template <class F>
using bits_t = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;

} // namespace detail

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    UTOPY_REQUIRE(t.rank() <= std::numeric_limits<std::uint16_t>::max(), "UTNS: rank too large");
    os.write("UTNS", 4);
    detail::put_le<std::uint16_t>(os, kUtnsVersion);
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        UTOPY_REQUIRE(d <= std::numeric_limits<std::uint32_t>::max(), "UTNS: dimension too large");
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    }
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    for (T v : t.values()) {
        detail::bits_t<T> bits;
        std::memcpy(&bits, &v, sizeof(T));
        detail::put_le(os, bits);
    }
}

namespace detail {

template <class F, class T>
void read_payload(std::istream& is, Tensor<T>& out) {
    for (auto& v : out.values()) {
        auto bits = get_le<bits_t<F>>(is);
        F f;
        std::memcpy(&f, &bits, sizeof(F));
        v = static_cast<T>(f);
    }
}

} // namespace detail

/// Reads one record, converting the stored dtype to T.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "UTNS", 4) != 0) throw ContractViolation("UTNS: bad magic");
    const auto version = detail::get_le<std::uint16_t>(is);
    if (version != kUtnsVersion) throw ContractViolation("UTNS: unsupported version " + std::to_string(version));
    const auto rank = detail::get_le<std::uint16_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint32_t>(is);
    const auto code = detail::get_le<std::uint8_t>(is);
    Tensor<T> out(shape);
    if (code == static_cast<std::uint8_t>(DType::F32)) {
        detail::read_payload<float>(is, out);
    } else if (code == static_cast<std::uint8_t>(DType::F64)) {
        detail::read_payload<double>(is, out);
    } else {
        throw ContractViolation("UTNS: unknown dtype code " + std::to_string(code));
    }
    return out;
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingPrerequisite("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisite("cannot open " + path.string());
    return read_tensor<T>(is);
}

template <class T>
void save_bundle(const std::filesystem::path& path, const std::vector<Tensor<T>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingPrerequisite("cannot open " + path.string() + " for writing");
    for (const auto& t : tensors) write_tensor(os, t);
}

template <class T>
std::vector<Tensor<T>> load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisite("cannot open " + path.string());
    std::vector<Tensor<T>> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor<T>(is));
    return out;
}

} // namespace utopy
