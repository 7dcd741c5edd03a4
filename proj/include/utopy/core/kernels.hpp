#pragma once

// Tape-free numeric kernels shared by the differentiable ops and by code
// that needs plain forward/adjoint maps (power iteration, operators).
// Layout is NCHW throughout.

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <numbers>
#include <type_traits>
#include <vector>

#include "utopy/core/tensor.hpp"

namespace utopy::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::size_t batch, in_ch, out_ch, height, width, kernel, pad, out_h, out_w;

    std::size_t patch() const { return in_ch * kernel * kernel; }
    std::size_t out_pixels() const { return out_h * out_w; }
    std::size_t in_pixels() const { return height * width; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t pad) {
    UTOPY_REQUIRE(x.size() == 4, "conv2d: input must be NCHW, got " + shape_str(x));
    UTOPY_REQUIRE(w.size() == 4 && w[2] == w[3], "conv2d: weight must be [Co,Ci,k,k], got " + shape_str(w));
    UTOPY_REQUIRE(x[1] == w[1], "conv2d: channel mismatch " + shape_str(x) + " vs " + shape_str(w));
    const std::size_t k = w[2];
    UTOPY_REQUIRE(x[2] + 2 * pad + 1 > k && x[3] + 2 * pad + 1 > k, "conv2d: kernel larger than padded input");
    return {x[0], x[1], w[0], x[2], x[3], k, pad, x[2] + 2 * pad + 1 - k, x[3] + 2 * pad + 1 - k};
}

/// Unfolds one CHW image into a [Ci*k*k, Ho*Wo] row-major patch matrix.
/// With padding_zeroed the padding entries of col are assumed to be zero
/// already and are left untouched.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col, bool padding_zeroed = false) {
    const auto k = static_cast<std::ptrdiff_t>(g.kernel);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
    const auto Ho = static_cast<std::ptrdiff_t>(g.out_h), Wo = static_cast<std::ptrdiff_t>(g.out_w);
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.in_ch); ++c) {
        const T* xc = x + c * H * W;
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, pad - kx);
                const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(Wo, W + pad - kx);
                for (std::ptrdiff_t oy = 0; oy < Ho; ++oy) {
                    T* dst = row + oy * Wo;
                    const std::ptrdiff_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= H || x0 >= x1) {
                        if (!padding_zeroed) std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + iy * W + (x0 + kx - pad);
                    if (!padding_zeroed) {
                        std::fill(dst, dst + x0, T(0));
                        std::fill(dst + x1, dst + Wo, T(0));
                    }
                    for (std::ptrdiff_t i = 0; i < x1 - x0; ++i) dst[x0 + i] = src[i];
                }
            }
        }
    }
}

/// Adjoint of im2col: folds a patch matrix back, accumulating into x.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
    const auto k = static_cast<std::ptrdiff_t>(g.kernel);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
    const auto Ho = static_cast<std::ptrdiff_t>(g.out_h), Wo = static_cast<std::ptrdiff_t>(g.out_w);
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.in_ch); ++c) {
        T* xc = x + c * H * W;
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, pad - kx);
                const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(Wo, W + pad - kx);
                for (std::ptrdiff_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + oy * Wo + x0;
                    T* dst = xc + iy * W + (x0 + kx - pad);
                    for (std::ptrdiff_t i = 0; i < x1 - x0; ++i) dst[i] += src[i];
                }
            }
        }
    }
}

template <class T>
bool direct_patches(const ConvGeometry& g) {
    return g.kernel == 1 && g.pad == 0;
}

/// im2col + GEMM cross-correlation; reference for the direct kernels below.
template <class T>
Tensor<T> conv2d_gemm(const Tensor<T>& x, const Tensor<T>& w, const Tensor<std::type_identity_t<T>>* bias, std::size_t pad) {
    const auto g = conv_geometry(x.shape(), w.shape(), pad);
    if (bias) UTOPY_REQUIRE(bias->numel() == g.out_ch, "conv2d: bias length mismatch");
    Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
    const auto CK = static_cast<Eigen::Index>(g.patch());
    const auto P = static_cast<Eigen::Index>(g.out_pixels());
    const auto Co = static_cast<Eigen::Index>(g.out_ch);
    Eigen::Map<const RowMat<T>> Wm(w.data(), Co, CK);
    std::vector<T> col;
    if (!direct_patches<T>(g)) col.resize(g.patch() * g.out_pixels());
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xb = x.data() + b * g.in_ch * g.in_pixels();
        const T* cp = xb;
        if (!col.empty()) {
            im2col(xb, g, col.data(), true);
            cp = col.data();
        }
        Eigen::Map<const RowMat<T>> C(cp, CK, P);
        Eigen::Map<RowMat<T>> O(out.data() + b * g.out_ch * g.out_pixels(), Co, P);
        O.noalias() = Wm * C;
        if (bias) {
            for (Eigen::Index o = 0; o < Co; ++o) O.row(o).array() += (*bias)[static_cast<std::size_t>(o)];
        }
    }
    return out;
}

/// Adjoint of conv2d with respect to its input: maps [B,Co,Ho,Wo] to
/// [B,Ci,H,W] where H = Ho + k - 1 - 2*pad.
template <class T>
Tensor<T> conv2d_transpose_gemm(const Tensor<T>& y, const Tensor<T>& w, std::size_t pad) {
    UTOPY_REQUIRE(y.rank() == 4 && w.rank() == 4 && y.dim(1) == w.dim(0),
                  "conv_transpose2d: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(w.shape()));
    const std::size_t k = w.dim(2);
    UTOPY_REQUIRE(y.dim(2) + k - 1 >= 2 * pad + 1 && y.dim(3) + k - 1 >= 2 * pad + 1,
                  "conv_transpose2d: padding too large");
    const Shape in_shape{y.dim(0), w.dim(1), y.dim(2) + k - 1 - 2 * pad, y.dim(3) + k - 1 - 2 * pad};
    const auto g = conv_geometry(in_shape, w.shape(), pad);
    Tensor<T> out(in_shape);
    const auto CK = static_cast<Eigen::Index>(g.patch());
    const auto P = static_cast<Eigen::Index>(g.out_pixels());
    const auto Co = static_cast<Eigen::Index>(g.out_ch);
    Eigen::Map<const RowMat<T>> Wm(w.data(), Co, CK);
    const bool direct = direct_patches<T>(g);
    std::vector<T> col(direct ? 0 : g.patch() * g.out_pixels());
    for (std::size_t b = 0; b < g.batch; ++b) {
        Eigen::Map<const RowMat<T>> Y(y.data() + b * g.out_ch * g.out_pixels(), Co, P);
        T* xb = out.data() + b * g.in_ch * g.in_pixels();
        if (direct) {
            Eigen::Map<RowMat<T>> X(xb, CK, P);
            X.noalias() = Wm.transpose() * Y;
        } else {
            Eigen::Map<RowMat<T>> C(col.data(), CK, P);
            C.noalias() = Wm.transpose() * Y;
            col2im(col.data(), g, xb);
        }
    }
    return out;
}

/// d(conv2d)/d(weight) contracted with upstream gradient gy.
template <class T>
Tensor<T> conv2d_weight_grad_gemm(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, std::size_t pad) {
    const auto g = conv_geometry(x.shape(), w_shape, pad);
    Tensor<T> gw(w_shape);
    const auto CK = static_cast<Eigen::Index>(g.patch());
    const auto P = static_cast<Eigen::Index>(g.out_pixels());
    const auto Co = static_cast<Eigen::Index>(g.out_ch);
    Eigen::Map<RowMat<T>> GW(gw.data(), Co, CK);
    std::vector<T> col;
    if (!direct_patches<T>(g)) col.resize(g.patch() * g.out_pixels());
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xb = x.data() + b * g.in_ch * g.in_pixels();
        const T* cp = xb;
        if (!col.empty()) {
            im2col(xb, g, col.data(), true);
            cp = col.data();
        }
        Eigen::Map<const RowMat<T>> C(cp, CK, P);
        Eigen::Map<const RowMat<T>> GY(gy.data() + b * g.out_ch * g.out_pixels(), Co, P);
        GW.noalias() += GY * C.transpose();
    }
    return gw;
}

namespace direct {

template <class T>
inline constexpr std::size_t lanes = 64 / sizeof(T);
inline constexpr std::size_t out_block = 8;

template <class T>
using vec [[gnu::vector_size(64)]] = T;

template <class T>
inline vec<T> load(const T* p) {
    vec<T> v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

/// Direct kernels win once the output-channel block is reasonably full.
inline bool preferred(std::size_t out_channels, std::size_t kernel) { return kernel > 1 && out_channels >= 4; }

inline std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

/// Zero-padded copy of a CHW image: rows of `stride` entries, interior at
/// (pad, pad). Entries outside the interior are never written, so a buffer
/// zeroed once stays valid across images of the same geometry.
template <class T>
void pad_into(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t pad, std::size_t rows,
              std::size_t stride, T* dst) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            std::copy(x + (c * H + i) * W, x + (c * H + i + 1) * W, dst + (c * rows + i + pad) * stride + pad);
}

/// Weights regrouped as [Co/4][Ci][k*k][4], zero-filled past Co.
template <class T>
std::vector<T> pack_weights(const T* w, std::size_t Co, std::size_t Ci, std::size_t kk) {
    const std::size_t nb = round_up(Co, out_block) / out_block;
    std::vector<T> p(nb * Ci * kk * out_block, T(0));
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t j = 0; j < kk; ++j)
                p[(((o / out_block) * Ci + c) * kk + j) * out_block + o % out_block] = w[(o * Ci + c) * kk + j];
    return p;
}

/// Correlates one padded image with packed weights. Output columns are
/// computed in full vector chunks; the padded row stride covers the overrun.
template <class T>
void correlate(const T* xp, std::size_t Ci, std::size_t rows, std::size_t stride, const T* wp, std::size_t Co,
               std::size_t k, const T* bias, std::size_t Ho, std::size_t Wo, T* out) {
    constexpr std::size_t V = lanes<T>, B = out_block;
    const std::size_t kk = k * k;
    for (std::size_t o0 = 0; o0 < Co; o0 += B) {
        const std::size_t nb = std::min(B, Co - o0);
        const T* wb = wp + (o0 / B) * Ci * kk * B;
        for (std::size_t y = 0; y < Ho; ++y) {
            for (std::size_t x0 = 0; x0 < Wo; x0 += V) {
                vec<T> acc[B] = {};
                for (std::size_t c = 0; c < Ci; ++c) {
                    const T* wc = wb + c * kk * B;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const T* row = xp + (c * rows + y + ky) * stride + x0;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const vec<T> r = load(row + kx);
                            const T* wq = wc + (ky * k + kx) * B;
#pragma GCC unroll 8
                            for (std::size_t q = 0; q < B; ++q) acc[q] += wq[q] * r;
                        }
                    }
                }
                const std::size_t n = std::min(V, Wo - x0);
                for (std::size_t q = 0; q < nb; ++q) {
                    T* dst = out + ((o0 + q) * Ho + y) * Wo + x0;
                    const T init = bias ? bias[o0 + q] : T(0);
                    for (std::size_t j = 0; j < n; ++j) dst[j] = init + acc[q][j];
                }
            }
        }
    }
}

/// Accumulates one weight-gradient tap for one input channel and up to
/// out_block output channels; dst[q * o_stride] receives channel q.
template <class T>
void weight_taps(const T* xr, std::size_t stride, const T* gr, std::size_t Ho, std::size_t Wr, std::size_t nb,
                 std::size_t o_stride, double* dst) {
    constexpr std::size_t V = lanes<T>, B = out_block;
    const std::size_t plane = Ho * Wr;
    vec<T> acc[B] = {};
    for (std::size_t y = 0; y < Ho; ++y) {
        const T* r = xr + y * stride;
        const T* g = gr + y * Wr;
        for (std::size_t x0 = 0; x0 < Wr; x0 += V) {
            const vec<T> xv = load(r + x0);
#pragma GCC unroll 8
            for (std::size_t q = 0; q < B; ++q) acc[q] += load(g + q * plane + x0) * xv;
        }
    }
    for (std::size_t q = 0; q < nb; ++q) {
        T s = 0;
        for (std::size_t j = 0; j < V; ++j) s += acc[q][j];
        dst[q * o_stride] += s;
    }
}

template <class T>
Tensor<T> conv(const Tensor<T>& x, const T* w, std::size_t Co, std::size_t k, const T* bias, std::size_t pad) {
    const std::size_t Bn = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H + 2 * pad + 1 - k, Wo = W + 2 * pad + 1 - k;
    const std::size_t rows = H + 2 * pad, stride = round_up(Wo, lanes<T>) + k - 1;
    const auto wp = pack_weights(w, Co, Ci, k * k);
    std::vector<T> xp(Ci * rows * stride, T(0));
    Tensor<T> out({Bn, Co, Ho, Wo});
    for (std::size_t b = 0; b < Bn; ++b) {
        pad_into(x.data() + b * Ci * H * W, Ci, H, W, pad, rows, stride, xp.data());
        correlate(xp.data(), Ci, rows, stride, wp.data(), Co, k, bias, Ho, Wo, out.data() + b * Co * Ho * Wo);
    }
    return out;
}

} // namespace direct

/// Cross-correlation with zero padding, stride 1 (the usual "conv2d").
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<std::type_identity_t<T>>* bias, std::size_t pad) {
    const auto g = conv_geometry(x.shape(), w.shape(), pad);
    if (bias) UTOPY_REQUIRE(bias->numel() == g.out_ch, "conv2d: bias length mismatch");
    if (!direct::preferred(g.out_ch, g.kernel)) return conv2d_gemm(x, w, bias, pad);
    return direct::conv(x, w.data(), g.out_ch, g.kernel, bias ? bias->data() : nullptr, pad);
}

/// Adjoint of conv2d with respect to its input: maps [B,Co,Ho,Wo] to
/// [B,Ci,H,W] where H = Ho + k - 1 - 2*pad.
template <class T>
Tensor<T> conv2d_transpose(const Tensor<T>& y, const Tensor<T>& w, std::size_t pad) {
    UTOPY_REQUIRE(y.rank() == 4 && w.rank() == 4 && y.dim(1) == w.dim(0),
                  "conv_transpose2d: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(w.shape()));
    const std::size_t k = w.dim(2);
    if (pad >= k || !direct::preferred(w.dim(1), k)) return conv2d_transpose_gemm(y, w, pad);
    UTOPY_REQUIRE(y.dim(2) + k - 1 >= 2 * pad + 1 && y.dim(3) + k - 1 >= 2 * pad + 1,
                  "conv_transpose2d: padding too large");
    // Correlation with the flipped, channel-swapped kernel.
    const std::size_t Co = w.dim(0), Ci = w.dim(1), kk = k * k;
    std::vector<T> wf(w.numel());
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t j = 0; j < kk; ++j) wf[(c * Co + o) * kk + j] = w[(o * Ci + c) * kk + (kk - 1 - j)];
    return direct::conv(y, wf.data(), Ci, k, static_cast<const T*>(nullptr), k - 1 - pad);
}

/// d(conv2d)/d(weight) contracted with upstream gradient gy.
template <class T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, std::size_t pad) {
    const auto g = conv_geometry(x.shape(), w_shape, pad);
    require_same_shape(gy.shape(), Shape{g.batch, g.out_ch, g.out_h, g.out_w}, "conv2d_weight_grad");
    if (!direct::preferred(g.out_ch, g.kernel)) return conv2d_weight_grad_gemm(x, gy, w_shape, pad);
    constexpr std::size_t V = direct::lanes<T>, B = direct::out_block;
    const std::size_t Ci = g.in_ch, Co = g.out_ch, k = g.kernel, kk = k * k, Ho = g.out_h, Wo = g.out_w;
    const std::size_t rows = g.height + 2 * pad, Wr = direct::round_up(Wo, V), stride = Wr + k - 1;
    const std::size_t Cb = direct::round_up(Co, B);
    std::vector<T> xp(Ci * rows * stride, T(0)), gp(Cb * Ho * Wr, T(0));
    std::vector<double> acc_w(Co * Ci * kk, 0.0);
    for (std::size_t b = 0; b < g.batch; ++b) {
        direct::pad_into(x.data() + b * Ci * g.in_pixels(), Ci, g.height, g.width, pad, rows, stride, xp.data());
        direct::pad_into(gy.data() + b * Co * Ho * Wo, Co, Ho, Wo, 0, Ho, Wr, gp.data());
        for (std::size_t o0 = 0; o0 < Co; o0 += B) {
            const std::size_t nb = std::min(B, Co - o0);
            for (std::size_t c = 0; c < Ci; ++c)
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const T* xr = xp.data() + (c * rows + ky) * stride;
                    const T* gr = gp.data() + o0 * Ho * Wr;
                    double* dst = acc_w.data() + (o0 * Ci + c) * kk + ky * k;
                    for (std::size_t kx = 0; kx < k; ++kx)
                        direct::weight_taps(xr + kx, stride, gr, Ho, Wr, nb, Ci * kk, dst + kx);
                }
        }
    }
    Tensor<T> gw(w_shape);
    for (std::size_t i = 0; i < gw.numel(); ++i) gw[i] = static_cast<T>(acc_w[i]);
    return gw;
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    UTOPY_REQUIRE(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                  "avg_pool2: needs NCHW with even sides, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), h = H / 2, w = W / 2;
    Tensor<T> out({x.dim(0), x.dim(1), h, w});
    for (std::size_t n = 0; n < N; ++n) {
        const T* s = x.data() + n * H * W;
        T* d = out.data() + n * h * w;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                d[i * w + j] = T(0.25) * (s[2 * i * W + 2 * j] + s[2 * i * W + 2 * j + 1] + s[(2 * i + 1) * W + 2 * j] +
                                          s[(2 * i + 1) * W + 2 * j + 1]);
    }
    return out;
}

/// Nearest-neighbour upsampling by 2, scaled by `s` (s = 0.25 gives the
/// adjoint of avg_pool2).
template <class T>
Tensor<T> upsample2(const Tensor<T>& x, T s = T(1)) {
    UTOPY_REQUIRE(x.rank() == 4, "upsample2: needs NCHW");
    const std::size_t N = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), H = 2 * h, W = 2 * w;
    Tensor<T> out({x.dim(0), x.dim(1), H, W});
    for (std::size_t n = 0; n < N; ++n) {
        const T* src = x.data() + n * h * w;
        T* d = out.data() + n * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) d[i * W + j] = s * src[(i / 2) * w + j / 2];
    }
    return out;
}

/// Adjoint of upsample2 (2x2 block sums).
template <class T>
Tensor<T> sum_pool2(const Tensor<T>& x) {
    Tensor<T> out = avg_pool2(x);
    for (auto& v : out.values()) v *= T(4);
    return out;
}

/// Separable filtering with "valid" extent on the last two axes:
/// out[i,j] = sum_{a,b} k[a] k[b] x[i+a, j+b].
template <class T>
Tensor<T> separable_valid(const Tensor<T>& x, const std::vector<T>& k) {
    UTOPY_REQUIRE(x.rank() == 4, "separable filter: needs NCHW");
    const std::size_t L = k.size(), H = x.dim(2), W = x.dim(3);
    UTOPY_REQUIRE(L >= 1 && L <= H && L <= W, "separable filter: window larger than image");
    const std::size_t Ho = H - L + 1, Wo = W - L + 1, N = x.dim(0) * x.dim(1);
    Tensor<T> out({x.dim(0), x.dim(1), Ho, Wo});
    std::vector<T> tmp(H * Wo);
    for (std::size_t n = 0; n < N; ++n) {
        const T* s = x.data() + n * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                T acc = 0;
                for (std::size_t b = 0; b < L; ++b) acc += k[b] * s[i * W + j + b];
                tmp[i * Wo + j] = acc;
            }
        T* d = out.data() + n * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                T acc = 0;
                for (std::size_t a = 0; a < L; ++a) acc += k[a] * tmp[(i + a) * Wo + j];
                d[i * Wo + j] = acc;
            }
    }
    return out;
}

/// Adjoint of separable_valid.
template <class T>
Tensor<T> separable_valid_adjoint(const Tensor<T>& g, const std::vector<T>& k, std::size_t H, std::size_t W) {
    const std::size_t L = k.size(), Ho = g.dim(2), Wo = g.dim(3), N = g.dim(0) * g.dim(1);
    Tensor<T> out({g.dim(0), g.dim(1), H, W});
    std::vector<T> tmp(H * Wo);
    for (std::size_t n = 0; n < N; ++n) {
        std::fill(tmp.begin(), tmp.end(), T(0));
        const T* s = g.data() + n * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t a = 0; a < L; ++a)
                for (std::size_t j = 0; j < Wo; ++j) tmp[(i + a) * Wo + j] += k[a] * s[i * Wo + j];
        T* d = out.data() + n * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < Wo; ++j)
                for (std::size_t b = 0; b < L; ++b) d[i * W + j + b] += k[b] * tmp[i * Wo + j];
    }
    return out;
}

/// Unitary 2-D DFT of real images on the last two axes, evaluated separably.
template <class T>
class Dft2 {
public:
    Dft2(std::size_t h, std::size_t w) : h_(h), w_(w), ch_(table(h, true)), sh_(table(h, false)), cw_(table(w, true)), sw_(table(w, false)) {}

    /// Writes real and imaginary planes of F x for one h*w image.
    void forward(const T* x, T* re, T* im) const {
        std::vector<T> ar(h_ * w_), ai(h_ * w_);
        for (std::size_t r = 0; r < h_; ++r)
            for (std::size_t v = 0; v < w_; ++v) {
                T sr = 0, si = 0;
                for (std::size_t c = 0; c < w_; ++c) {
                    sr += x[r * w_ + c] * cw_[v * w_ + c];
                    si -= x[r * w_ + c] * sw_[v * w_ + c];
                }
                ar[r * w_ + v] = sr;
                ai[r * w_ + v] = si;
            }
        const T scale = T(1) / std::sqrt(static_cast<T>(h_ * w_));
        for (std::size_t u = 0; u < h_; ++u)
            for (std::size_t v = 0; v < w_; ++v) {
                T sr = 0, si = 0;
                for (std::size_t r = 0; r < h_; ++r) {
                    const T c = ch_[u * h_ + r], s = sh_[u * h_ + r];
                    const T xr = ar[r * w_ + v], xi = ai[r * w_ + v];
                    sr += xr * c + xi * s;
                    si += xi * c - xr * s;
                }
                re[u * w_ + v] = sr * scale;
                im[u * w_ + v] = si * scale;
            }
    }

    /// Real part of F^H c for one complex h*w plane.
    void adjoint_real(const T* re, const T* im, T* x) const {
        std::vector<T> ar(h_ * w_), ai(h_ * w_);
        for (std::size_t r = 0; r < h_; ++r)
            for (std::size_t v = 0; v < w_; ++v) {
                T sr = 0, si = 0;
                for (std::size_t u = 0; u < h_; ++u) {
                    const T c = ch_[u * h_ + r], s = sh_[u * h_ + r];
                    sr += re[u * w_ + v] * c - im[u * w_ + v] * s;
                    si += im[u * w_ + v] * c + re[u * w_ + v] * s;
                }
                ar[r * w_ + v] = sr;
                ai[r * w_ + v] = si;
            }
        const T scale = T(1) / std::sqrt(static_cast<T>(h_ * w_));
        for (std::size_t r = 0; r < h_; ++r)
            for (std::size_t c = 0; c < w_; ++c) {
                T sr = 0;
                for (std::size_t v = 0; v < w_; ++v) sr += ar[r * w_ + v] * cw_[v * w_ + c] - ai[r * w_ + v] * sw_[v * w_ + c];
                x[r * w_ + c] = sr * scale;
            }
    }

private:
    static std::vector<T> table(std::size_t n, bool cosine) {
        std::vector<T> t(n * n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const double ang = 2.0 * std::numbers::pi * static_cast<double>((a * b) % n) / static_cast<double>(n);
                t[a * n + b] = static_cast<T>(cosine ? std::cos(ang) : std::sin(ang));
            }
        return t;
    }

    std::size_t h_, w_;
    std::vector<T> ch_, sh_, cw_, sw_;
};

} // namespace utopy::kernels
