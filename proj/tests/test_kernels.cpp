#include <gtest/gtest.h>

#include <cmath>

#include "utopy/core/kernels.hpp"
#include "utopy/core/rng.hpp"

using namespace utopy;

namespace {

struct Case {
    std::size_t B, Ci, Co, H, W, k, pad;
};

// Covers both the direct path (k > 1, Co >= 4) and the GEMM fallback,
// including widths that are not lane multiples and pad >= k.
const Case kCases[] = {
    {2, 3, 8, 9, 7, 3, 1},  {1, 1, 4, 16, 16, 3, 1}, {2, 5, 11, 6, 13, 3, 1}, {1, 2, 16, 8, 8, 5, 2},
    {1, 3, 9, 7, 5, 5, 0},  {2, 2, 6, 5, 5, 3, 3},   {1, 4, 3, 6, 6, 3, 1},   {1, 3, 8, 6, 6, 1, 0},
    {1, 8, 16, 4, 33, 3, 1}, {3, 1, 1, 5, 4, 3, 2},
};

template <class T>
T at(const Tensor<T>& x, std::size_t b, std::size_t c, std::ptrdiff_t i, std::ptrdiff_t j) {
    const auto H = static_cast<std::ptrdiff_t>(x.dim(2)), W = static_cast<std::ptrdiff_t>(x.dim(3));
    if (i < 0 || i >= H || j < 0 || j >= W) return T(0);
    return x[((b * x.dim(1) + c) * x.dim(2) + static_cast<std::size_t>(i)) * x.dim(3) + static_cast<std::size_t>(j)];
}

// y[b,o,i,j] = bias[o] + sum_{c,u,v} x[b,c,i+u-pad,j+v-pad] w[o,c,u,v], accumulated in double.
template <class T>
Tensor<double> loop_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t pad) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0), k = w.dim(2);
    const std::size_t Ho = x.dim(2) + 2 * pad + 1 - k, Wo = x.dim(3) + 2 * pad + 1 - k;
    Tensor<double> y({B, Co, Ho, Wo});
    const auto p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = bias ? static_cast<double>((*bias)[o]) : 0.0;
                    for (std::size_t c = 0; c < Ci; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v)
                                s += static_cast<double>(at(x, b, c, static_cast<std::ptrdiff_t>(i + u) - p,
                                                            static_cast<std::ptrdiff_t>(j + v) - p)) *
                                     static_cast<double>(w[((o * Ci + c) * k + u) * k + v]);
                    y[((b * Co + o) * Ho + i) * Wo + j] = s;
                }
    return y;
}

// x[b,c,p,q] = sum_{o,u,v} y[b,o,p-u+pad,q-v+pad] w[o,c,u,v].
template <class T>
Tensor<double> loop_transpose(const Tensor<T>& y, const Tensor<T>& w, std::size_t pad) {
    const std::size_t B = y.dim(0), Co = w.dim(0), Ci = w.dim(1), k = w.dim(2);
    const std::size_t H = y.dim(2) + k - 1 - 2 * pad, W = y.dim(3) + k - 1 - 2 * pad;
    Tensor<double> x({B, Ci, H, W});
    const auto p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double s = 0;
                    for (std::size_t o = 0; o < Co; ++o)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v)
                                s += static_cast<double>(at(y, b, o, static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(u) + p,
                                                            static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(v) + p)) *
                                     static_cast<double>(w[((o * Ci + c) * k + u) * k + v]);
                    x[((b * Ci + c) * H + i) * W + j] = s;
                }
    return x;
}

// gw[o,c,u,v] = sum_{b,i,j} gy[b,o,i,j] x[b,c,i+u-pad,j+v-pad].
template <class T>
Tensor<double> loop_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& ws, std::size_t pad) {
    const std::size_t B = x.dim(0), Ci = ws[1], Co = ws[0], k = ws[2], Ho = gy.dim(2), Wo = gy.dim(3);
    Tensor<double> gw(ws);
    const auto p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    double s = 0;
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t i = 0; i < Ho; ++i)
                            for (std::size_t j = 0; j < Wo; ++j)
                                s += static_cast<double>(gy[((b * Co + o) * Ho + i) * Wo + j]) *
                                     static_cast<double>(at(x, b, c, static_cast<std::ptrdiff_t>(i + u) - p,
                                                            static_cast<std::ptrdiff_t>(j + v) - p));
                    gw[((o * Ci + c) * k + u) * k + v] = s;
                }
    return gw;
}

template <class T>
double max_rel(const Tensor<T>& got, const Tensor<double>& want) {
    EXPECT_EQ(got.shape(), want.shape());
    double scale = 1.0, err = 0.0;
    for (std::size_t i = 0; i < want.numel(); ++i) scale = std::max(scale, std::abs(want[i]));
    for (std::size_t i = 0; i < want.numel(); ++i) err = std::max(err, std::abs(static_cast<double>(got[i]) - want[i]));
    return err / scale;
}

template <class T>
void check_all(double tol) {
    Rng rng(42, sizeof(T));
    for (const auto& c : kCases) {
        SCOPED_TRACE(testing::Message() << "B" << c.B << " Ci" << c.Ci << " Co" << c.Co << " " << c.H << "x" << c.W
                                        << " k" << c.k << " pad" << c.pad);
        const auto x = rng.normal_tensor<T>({c.B, c.Ci, c.H, c.W});
        const auto w = rng.normal_tensor<T>({c.Co, c.Ci, c.k, c.k});
        const auto bias = rng.normal_tensor<T>({c.Co});
        const auto y = kernels::conv2d(x, w, &bias, c.pad);
        EXPECT_LE(max_rel(y, loop_conv(x, w, &bias, c.pad)), tol);
        EXPECT_LE(max_rel(kernels::conv2d_gemm(x, w, &bias, c.pad), loop_conv(x, w, &bias, c.pad)), tol);
        const auto gy = rng.normal_tensor<T>(y.shape());
        EXPECT_LE(max_rel(kernels::conv2d_transpose(gy, w, c.pad), loop_transpose(gy, w, c.pad)), tol);
        EXPECT_LE(max_rel(kernels::conv2d_weight_grad(x, gy, w.shape(), c.pad), loop_weight_grad(x, gy, w.shape(), c.pad)), tol);
    }
}

} // namespace

TEST(Conv, DoubleMatchesLoopOracles) { check_all<double>(1e-12); }

TEST(Conv, FloatMatchesLoopOracles) { check_all<float>(2e-5); }
