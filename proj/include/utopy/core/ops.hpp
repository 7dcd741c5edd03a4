#pragma once

// Differentiable ops on a Tape. Each op computes its value eagerly and
// registers a closure that pushes the upstream gradient into its inputs.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>

#include "utopy/core/autodiff.hpp"
#include "utopy/core/kernels.hpp"

namespace utopy::ops {

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value() + b.value();
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("add", std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        t.accumulate(ia, t.grad(self));
        t.accumulate(ib, t.grad(self));
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value() - b.value();
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("sub", std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        t.accumulate(ia, t.grad(self));
        if (t.requires_grad(ib)) t.accumulate(ib, T(-1) * t.grad(self));
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("mul", std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
            auto& ga = t.grad_buffer(ia);
            const auto& vb = t.value(ib);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib);
            const auto& va = t.value(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "div");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("div", std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& va = t.value(ia);
        const auto& vb = t.value(ib);
        if (t.requires_grad(ia)) {
            auto& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb[i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
    });
}

/// s * a for a fixed scalar s.
template <class T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = s * a.value();
    const int ia = a.id();
    return a.tape()->record("scale", std::move(out), {a},
                            [ia, s](Tape<T>& t, int self) { t.accumulate(ia, s * t.grad(self)); });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v += c;
    const int ia = a.id();
    return a.tape()->record("add_scalar", std::move(out), {a},
                            [ia](Tape<T>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

/// s * x where s is a one-element node (e.g. a learned step size).
template <class T>
Var<T> smul(Var<T> s, Var<T> x) {
    UTOPY_REQUIRE(s.value().numel() == 1, "smul: scale must have one element");
    const T sv = s.value()[0];
    Tensor<T> out = sv * x.value();
    const int is = s.id(), ix = x.id();
    return x.tape()->record("smul", std::move(out), {s, x}, [is, ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(is)) {
            T acc = 0;
            const auto& xv = t.value(ix);
            for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
            t.grad_buffer(is)[0] += acc;
        }
        if (t.requires_grad(ix)) t.accumulate(ix, t.value(is)[0] * g);
    });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    UTOPY_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2 && a.value().dim(1) == b.value().dim(0),
                  "matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    using M = kernels::RowMat<T>;
    const auto m = static_cast<Eigen::Index>(a.value().dim(0)), k = static_cast<Eigen::Index>(a.value().dim(1)),
               n = static_cast<Eigen::Index>(b.value().dim(1));
    Tensor<T> out({a.value().dim(0), b.value().dim(1)});
    Eigen::Map<M>(out.data(), m, n).noalias() =
        Eigen::Map<const M>(a.value().data(), m, k) * Eigen::Map<const M>(b.value().data(), k, n);
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, int self) {
        Eigen::Map<const M> G(t.grad(self).data(), m, n);
        if (t.requires_grad(ia))
            Eigen::Map<M>(t.grad_buffer(ia).data(), m, k).noalias() += G * Eigen::Map<const M>(t.value(ib).data(), k, n).transpose();
        if (t.requires_grad(ib))
            Eigen::Map<M>(t.grad_buffer(ib).data(), k, n).noalias() += Eigen::Map<const M>(t.value(ia).data(), m, k).transpose() * G;
    });
}

/// 2-D convolution (cross-correlation), stride 1, zero padding `pad`
/// (default: half the kernel, preserving spatial size).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<std::type_identity_t<T>>> bias = std::nullopt, std::optional<std::size_t> pad = std::nullopt) {
    const std::size_t p = pad.value_or(w.value().rank() == 4 ? w.value().dim(2) / 2 : 0);
    Tensor<T> out = kernels::conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, p);
    const int ix = x.id(), iw = w.id(), ib = bias ? bias->id() : -1;
    auto bw = [ix, iw, ib, p](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ix)) t.accumulate(ix, kernels::conv2d_transpose(g, t.value(iw), p));
        if (t.requires_grad(iw)) t.accumulate(iw, kernels::conv2d_weight_grad(t.value(ix), g, t.value(iw).shape(), p));
        if (ib >= 0 && t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib);
            const std::size_t B = g.dim(0), C = g.dim(1), P = g.dim(2) * g.dim(3);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* s = g.data() + (b * C + c) * P;
                    T acc = 0;
                    for (std::size_t i = 0; i < P; ++i) acc += s[i];
                    gb[c] += acc;
                }
        }
    };
    if (bias) return x.tape()->record("conv2d", std::move(out), {x, w, *bias}, std::move(bw));
    return x.tape()->record("conv2d", std::move(out), {x, w}, std::move(bw));
}

/// Transposed convolution: the input-adjoint of conv2d with the same weight.
template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, std::optional<std::size_t> pad = std::nullopt) {
    const std::size_t p = pad.value_or(w.value().rank() == 4 ? w.value().dim(2) / 2 : 0);
    Tensor<T> out = kernels::conv2d_transpose(x.value(), w.value(), p);
    const int ix = x.id(), iw = w.id();
    return x.tape()->record("conv_transpose2d", std::move(out), {x, w}, [ix, iw, p](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ix)) t.accumulate(ix, kernels::conv2d(g, t.value(iw), nullptr, p));
        if (t.requires_grad(iw)) t.accumulate(iw, kernels::conv2d_weight_grad(g, t.value(ix), t.value(iw).shape(), p));
    });
}

template <class T>
Var<T> avg_pool2(Var<T> x) {
    Tensor<T> out = kernels::avg_pool2(x.value());
    const int ix = x.id();
    return x.tape()->record("avg_pool2", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        t.accumulate(ix, kernels::upsample2(t.grad(self), T(0.25)));
    });
}

template <class T>
Var<T> upsample2(Var<T> x) {
    Tensor<T> out = kernels::upsample2(x.value());
    const int ix = x.id();
    return x.tape()->record("upsample2", std::move(out), {x},
                            [ix](Tape<T>& t, int self) { t.accumulate(ix, kernels::sum_pool2(t.grad(self))); });
}

/// Concatenates two NCHW tensors along channels.
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
    const auto& va = a.value();
    const auto& vb = b.value();
    UTOPY_REQUIRE(va.rank() == 4 && vb.rank() == 4 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) &&
                      va.dim(3) == vb.dim(3),
                  "concat_channels: incompatible " + shape_str(va.shape()) + " and " + shape_str(vb.shape()));
    const std::size_t B = va.dim(0), ca = va.per_sample(), cb = vb.per_sample();
    Tensor<T> out({B, va.dim(1) + vb.dim(1), va.dim(2), va.dim(3)});
    for (std::size_t n = 0; n < B; ++n) {
        std::copy_n(va.data() + n * ca, ca, out.data() + n * (ca + cb));
        std::copy_n(vb.data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
    }
    const int ia = a.id(), ib = b.id();
    return a.tape()->record("concat_channels", std::move(out), {a, b}, [ia, ib, B, ca, cb](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
            auto& ga = t.grad_buffer(ia);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t i = 0; i < ca; ++i) ga[n * ca + i] += g[n * (ca + cb) + i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t i = 0; i < cb; ++i) gb[n * cb + i] += g[n * (ca + cb) + ca + i];
        }
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    const int ix = x.id();
    return x.tape()->record("relu", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += xv[i] > T(0) ? g[i] : T(0);
    });
}

namespace detail {
template <class T>
T normal_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}
template <class T>
T normal_pdf(T x) {
    return std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
}
} // namespace detail

/// Exact GELU, x * Phi(x).
template <class T>
Var<T> gelu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v * detail::normal_cdf(v);
    const int ix = x.id();
    return x.tape()->record("gelu", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.numel(); ++i)
            gx[i] += g[i] * (detail::normal_cdf(xv[i]) + xv[i] * detail::normal_pdf(xv[i]));
    });
}

/// Largest slope of GELU, attained at x = sqrt(2).
inline constexpr double kGeluLipschitz = 1.1289041451851548;

template <class T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Per-channel normalization over (N, H, W). In training mode batch
/// statistics are used and `state` is updated; otherwise state is read.
namespace detail {
// Fixed-order lane sums: the result does not depend on pointer alignment.
inline constexpr std::size_t kLanes = 16;

template <class T, class F>
double lane_sum(std::size_t n, F term) {
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
    for (std::size_t j = 0; i + j < n; ++j) acc[j] += term(i + j);
    double s = 0;
    for (std::size_t j = 0; j < kLanes; ++j) s += acc[j];
    return s;
}
} // namespace detail

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>* state, bool training,
                  T momentum = T(0.1), T eps = T(1e-5)) {
    const auto& xv = x.value();
    UTOPY_REQUIRE(xv.rank() == 4, "batch_norm: needs NCHW");
    const std::size_t B = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3), N = B * P;
    UTOPY_REQUIRE(gamma.value().numel() == C && beta.value().numel() == C, "batch_norm: affine size mismatch");
    UTOPY_REQUIRE(training || state != nullptr, "batch_norm: eval mode needs running statistics");
    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    Tensor<T> out(xv.shape());
    for (std::size_t c = 0; c < C; ++c) {
        T mean, var;
        if (training) {
            // Per-plane partial sums in T, accumulated across planes in double.
            double s = 0, s2 = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = xv.data() + (b * C + c) * P;
                s += detail::lane_sum<T>(P, [p](std::size_t i) { return p[i]; });
            }
            mean = static_cast<T>(s / static_cast<double>(N));
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = xv.data() + (b * C + c) * P;
                s2 += detail::lane_sum<T>(P, [p, mean](std::size_t i) { return (p[i] - mean) * (p[i] - mean); });
            }
            var = static_cast<T>(s2 / static_cast<double>(N));
            if (state) {
                const T unbiased = N > 1 ? var * T(N) / T(N - 1) : var;
                state->running_mean[c] = (T(1) - momentum) * state->running_mean[c] + momentum * mean;
                state->running_var[c] = (T(1) - momentum) * state->running_var[c] + momentum * unbiased;
            }
        } else {
            mean = state->running_mean[c];
            var = state->running_var[c];
        }
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        const T ga = gamma.value()[c], be = beta.value()[c];
        for (std::size_t b = 0; b < B; ++b) {
            const T* p = xv.data() + (b * C + c) * P;
            T* xh = xhat->data() + (b * C + c) * P;
            T* o = out.data() + (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
                xh[i] = (p[i] - mean) * is;
                o[i] = ga * xh[i] + be;
            }
        }
    }
    const int ix = x.id(), ig = gamma.id(), ibt = beta.id();
    return x.tape()->record("batch_norm", std::move(out), {x, gamma, beta},
                            [ix, ig, ibt, xhat, inv_std, training, B, C, P, N](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* gp = g.data() + (b * C + c) * P;
                const T* xh = xhat->data() + (b * C + c) * P;
                sum_g[c] += static_cast<T>(detail::lane_sum<T>(P, [gp](std::size_t i) { return gp[i]; }));
                sum_gx[c] += static_cast<T>(detail::lane_sum<T>(P, [gp, xh](std::size_t i) { return gp[i] * xh[i]; }));
            }
        if (t.requires_grad(ig)) {
            auto& gg = t.grad_buffer(ig);
            for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (t.requires_grad(ibt)) {
            auto& gb = t.grad_buffer(ibt);
            for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (!t.requires_grad(ix)) return;
        auto& gx = t.grad_buffer(ix);
        const auto& gamma_v = t.value(ig);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T k = gamma_v[c] * (*inv_std)[c];
                const T mg = sum_g[c] / T(N), mgx = sum_gx[c] / T(N);
                const T* gp = g.data() + (b * C + c) * P;
                const T* xh = xhat->data() + (b * C + c) * P;
                T* d = gx.data() + (b * C + c) * P;
                if (training) {
                    for (std::size_t i = 0; i < P; ++i) d[i] += k * (gp[i] - mg - xh[i] * mgx);
                } else {
                    for (std::size_t i = 0; i < P; ++i) d[i] += k * gp[i];
                }
            }
    });
}

template <class T>
Var<T> sum(Var<T> x) {
    T s = 0;
    for (T v : x.value().values()) s += v;
    const int ix = x.id();
    return x.tape()->record("sum", Tensor<T>::scalar(s), {x}, [ix](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        auto& gx = t.grad_buffer(ix);
        for (auto& v : gx.values()) v += g;
    });
}

template <class T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

/// Sum over every axis except the leading batch axis; returns [B].
template <class T>
Var<T> sum_per_sample(Var<T> x) {
    const auto& xv = x.value();
    const std::size_t B = xv.dim(0), per = xv.per_sample();
    Tensor<T> out(Shape{B});
    for (std::size_t b = 0; b < B; ++b) {
        T s = 0;
        for (std::size_t i = 0; i < per; ++i) s += xv[b * per + i];
        out[b] = s;
    }
    const int ix = x.id();
    return x.tape()->record("sum_per_sample", std::move(out), {x}, [ix, B, per](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < per; ++i) gx[b * per + i] += g[b];
    });
}

/// |x| with the subgradient at 0 taken as 0.
template <class T>
Var<T> abs(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = std::abs(v);
    const int ix = x.id();
    return x.tape()->record("abs", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += xv[i] > T(0) ? g[i] : (xv[i] < T(0) ? -g[i] : T(0));
    });
}

template <class T>
Var<T> square(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v * v;
    const int ix = x.id();
    return x.tape()->record("square", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += T(2) * xv[i] * g[i];
    });
}

/// sqrt with derivative 0 at 0 (keeps norms of zero residuals differentiable).
template <class T>
Var<T> sqrt(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) {
        UTOPY_REQUIRE(v >= T(0), "sqrt: negative input");
        v = std::sqrt(v);
    }
    const int ix = x.id();
    return x.tape()->record("sqrt", out, {x}, [ix, out](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (out[i] > T(0)) gx[i] += g[i] / (T(2) * out[i]);
    });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    const int ix = x.id();
    return x.tape()->record("reshape", std::move(out), {x}, [ix](Tape<T>& t, int self) {
        t.accumulate(ix, t.grad(self).reshaped(t.value(ix).shape()));
    });
}

/// Magnitude of the unitary 2-D DFT over the last two axes.
/// Derivative at a zero coefficient is taken as 0.
template <class T>
Var<T> fft2_abs(Var<T> x) {
    const auto& xv = x.value();
    UTOPY_REQUIRE(xv.rank() >= 2, "fft2_abs: needs at least 2 axes");
    const std::size_t H = xv.dim(xv.rank() - 2), W = xv.dim(xv.rank() - 1), planes = xv.numel() / (H * W);
    auto dft = std::make_shared<kernels::Dft2<T>>(H, W);
    auto re = std::make_shared<std::vector<T>>(xv.numel());
    auto im = std::make_shared<std::vector<T>>(xv.numel());
    Tensor<T> out(xv.shape());
    for (std::size_t p = 0; p < planes; ++p) dft->forward(xv.data() + p * H * W, re->data() + p * H * W, im->data() + p * H * W);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::hypot((*re)[i], (*im)[i]);
    const int ix = x.id();
    return x.tape()->record("fft2_abs", out, {x}, [ix, dft, re, im, out, H, W, planes](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        std::vector<T> cr(g.numel()), ci(g.numel());
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (out[i] > T(0)) {
                cr[i] = g[i] * (*re)[i] / out[i];
                ci[i] = g[i] * (*im)[i] / out[i];
            }
        }
        auto& gx = t.grad_buffer(ix);
        std::vector<T> plane(H * W);
        for (std::size_t p = 0; p < planes; ++p) {
            dft->adjoint_real(cr.data() + p * H * W, ci.data() + p * H * W, plane.data());
            for (std::size_t i = 0; i < H * W; ++i) gx[p * H * W + i] += plane[i];
        }
    });
}

/// Separable filter with "valid" extent on the last two axes of NCHW input.
template <class T>
Var<T> separable_filter(Var<T> x, std::vector<T> window) {
    Tensor<T> out = kernels::separable_valid(x.value(), window);
    const int ix = x.id();
    const std::size_t H = x.value().dim(2), W = x.value().dim(3);
    return x.tape()->record("separable_filter", std::move(out), {x}, [ix, window = std::move(window), H, W](Tape<T>& t, int self) {
        t.accumulate(ix, kernels::separable_valid_adjoint(t.grad(self), window, H, W));
    });
}

/// Applies a fixed linear map given as forward/adjoint pair.
template <class T>
Var<T> linear_map(Var<T> x, const std::function<Tensor<T>(const Tensor<T>&)>& forward,
                  std::function<Tensor<T>(const Tensor<T>&)> adjoint, const char* name = "linear_map") {
    Tensor<T> out = forward(x.value());
    const int ix = x.id();
    return x.tape()->record(name, std::move(out), {x},
                            [ix, adjoint = std::move(adjoint)](Tape<T>& t, int self) { t.accumulate(ix, adjoint(t.grad(self))); });
}

} // namespace utopy::ops
