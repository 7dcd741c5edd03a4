#pragma once

// Learned proximal maps D(v).
//
// unet:   v + UNet(v). Each level is two (3x3 conv, batch norm, ReLU) blocks;
//         average-pool down, nearest upsample, channel concat for skips. The
//         final 1x1 conv starts at zero so D starts as the identity.
// smooth: skip * v + B(v), B = conv -> act -> conv -> ... -> conv with
//         biases and no normalization. After spectral_normalize,
//         Lip(D) <= skip + act_lip^(L-1) * prod_l ||W_l|| <= beta_target.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "utopy/core/ops.hpp"
#include "utopy/core/power_iteration.hpp"
#include "utopy/core/rng.hpp"

namespace utopy {

enum class ProxFlavor { Unet, Smooth };
enum class Activation { Gelu, Relu, Identity };

inline std::string to_string(ProxFlavor f) { return f == ProxFlavor::Unet ? "unet" : "smooth"; }

inline ProxFlavor parse_flavor(const std::string& s) {
    if (s == "unet") return ProxFlavor::Unet;
    if (s == "smooth") return ProxFlavor::Smooth;
    throw ContractViolation("unknown prox flavor '" + s + "'");
}

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::Gelu: return "gelu";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    }
    return "unknown";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw ContractViolation("unknown activation '" + s + "'");
}

/// Largest slope of the activation.
inline double activation_lipschitz(Activation a) { return a == Activation::Gelu ? ops::kGeluLipschitz : 1.0; }

struct ProxConfig {
    ProxFlavor flavor = ProxFlavor::Unet;
    std::size_t channels = 1;
    std::size_t side = 32;               // image side used for spectral estimates
    std::vector<std::size_t> widths{8, 16}; // unet: per level; smooth: hidden layers
    std::size_t kernel = 3;
    Activation activation = Activation::Relu;
    double beta_target = 0.5;            // smooth only
    double residual_fraction = 0.5;      // smooth only: skip = fraction * beta_target
    int power_iters = 500;

    static ProxConfig unet(std::vector<std::size_t> widths, std::size_t side) {
        ProxConfig c;
        c.widths = std::move(widths);
        c.side = side;
        return c;
    }

    static ProxConfig smooth(std::size_t side, double beta_target, std::vector<std::size_t> widths = {8, 8, 8}) {
        ProxConfig c;
        c.flavor = ProxFlavor::Smooth;
        c.side = side;
        c.widths = std::move(widths);
        c.activation = Activation::Gelu;
        c.beta_target = beta_target;
        return c;
    }

    void validate() const {
        UTOPY_REQUIRE(channels >= 1 && kernel % 2 == 1, "prox config: need channels >= 1 and odd kernel");
        if (flavor == ProxFlavor::Unet) {
            UTOPY_REQUIRE(!widths.empty(), "prox config: unet needs at least one level");
            UTOPY_REQUIRE(side % (std::size_t{1} << (widths.size() - 1)) == 0,
                          "prox config: image side must be divisible by 2^(levels-1)");
        } else {
            UTOPY_REQUIRE(beta_target > 0.0 && beta_target < 1.0, "prox config: beta_target must lie in (0, 1)");
            UTOPY_REQUIRE(residual_fraction >= 0.0 && residual_fraction < 1.0,
                          "prox config: residual_fraction must lie in [0, 1)");
        }
    }

    /// Number of conv layers in the smooth residual branch.
    std::size_t smooth_layers() const { return widths.size() + 1; }
    double skip() const { return flavor == ProxFlavor::Smooth ? residual_fraction * beta_target : 1.0; }
};

/// Trainable tensors in a fixed order, plus batch-norm running statistics.
///   unet:   per conv block [W, gamma, beta], then final [W, b]
///   smooth: per layer [W, b]
template <class T>
struct ProxParams {
    ProxConfig config;
    std::vector<Tensor<T>> tensors;
    std::vector<std::string> names;
    std::vector<ops::BatchNormState<T>> bn;
    std::vector<std::string> warnings;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
};

namespace detail {

template <class T>
void push(ProxParams<T>& p, std::string name, Tensor<T> t) {
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
}

template <class T>
void push_conv_block(ProxParams<T>& p, const std::string& name, std::size_t ci, std::size_t co, std::size_t k, Rng& rng) {
    const double he = std::sqrt(2.0 / static_cast<double>(ci * k * k));
    push(p, name + ".w", rng.normal_tensor<T>({co, ci, k, k}, he));
    push(p, name + ".gamma", Tensor<T>({co}, T(1)));
    push(p, name + ".beta", Tensor<T>({co}, T(0)));
    p.bn.emplace_back(co);
}

template <class T>
Var<T> activate(Var<T> x, Activation a) {
    switch (a) {
    case Activation::Gelu: return ops::gelu(x);
    case Activation::Relu: return ops::relu(x);
    case Activation::Identity: return x;
    }
    return x;
}

} // namespace detail

/// Fresh parameters. unet: He init, zero final layer. smooth: random
/// weights, then spectrally normalized to the configured budget.
template <class T>
ProxParams<T> init_prox(const ProxConfig& cfg, Rng& rng);

template <class T>
void spectral_normalize(ProxParams<T>& p, double beta_target, int iters = 500);

template <class T>
ProxParams<T> init_prox(const ProxConfig& cfg, Rng& rng) {
    cfg.validate();
    ProxParams<T> p;
    p.config = cfg;
    const std::size_t k = cfg.kernel, C = cfg.channels;
    if (cfg.flavor == ProxFlavor::Unet) {
        const auto& w = cfg.widths;
        std::size_t in = C;
        for (std::size_t l = 0; l < w.size(); ++l) {
            const std::string e = "enc" + std::to_string(l);
            detail::push_conv_block(p, e + ".0", in, w[l], k, rng);
            detail::push_conv_block(p, e + ".1", w[l], w[l], k, rng);
            in = w[l];
        }
        for (std::size_t l = w.size() - 1; l-- > 0;) {
            const std::string d = "dec" + std::to_string(l);
            detail::push_conv_block(p, d + ".0", w[l + 1] + w[l], w[l], k, rng);
            detail::push_conv_block(p, d + ".1", w[l], w[l], k, rng);
        }
        detail::push(p, "final.w", Tensor<T>({C, w[0], 1, 1}));
        detail::push(p, "final.b", Tensor<T>({C}));
    } else {
        std::size_t in = C;
        for (std::size_t l = 0; l < cfg.smooth_layers(); ++l) {
            const std::size_t out = l < cfg.widths.size() ? cfg.widths[l] : C;
            const double s = std::sqrt(1.0 / static_cast<double>(in * k * k));
            detail::push(p, "layer" + std::to_string(l) + ".w", rng.normal_tensor<T>({out, in, k, k}, s));
            detail::push(p, "layer" + std::to_string(l) + ".b", rng.normal_tensor<T>({out}, 0.01));
            in = out;
        }
        spectral_normalize(p, cfg.beta_target, cfg.power_iters);
    }
    return p;
}

/// D(v) on a tape. `p` holds the bound parameter nodes in ProxParams order;
/// `bn` is updated in training mode.
template <class T>
Var<T> prox_forward(const ProxConfig& cfg, std::span<const Var<T>> p, Var<T> v,
                    std::vector<ops::BatchNormState<T>>* bn, bool training) {
    const auto& vs = v.value().shape();
    UTOPY_REQUIRE(vs.size() == 4 && vs[1] == cfg.channels && vs[2] == vs[3],
                  "prox: expected [B," + std::to_string(cfg.channels) + ",s,s] input, got " + shape_str(vs));
    std::size_t next = 0, next_bn = 0;
    auto take = [&]() {
        UTOPY_REQUIRE(next < p.size(), "prox: parameter list too short");
        return p[next++];
    };
    if (cfg.flavor == ProxFlavor::Unet) {
        const std::size_t levels = cfg.widths.size();
        UTOPY_REQUIRE(vs[2] % (std::size_t{1} << (levels - 1)) == 0,
                      "prox: image side " + std::to_string(vs[2]) + " not divisible by 2^(levels-1)");
        auto block = [&](Var<T> x) {
            auto w = take();
            auto g = take();
            auto b = take();
            auto* st = bn ? &(*bn)[next_bn] : nullptr;
            ++next_bn;
            return ops::relu(ops::batch_norm(ops::conv2d(x, w), g, b, st, training));
        };
        std::vector<Var<T>> skips;
        Var<T> h = v;
        for (std::size_t l = 0; l < levels; ++l) {
            if (l > 0) h = ops::avg_pool2(h);
            h = block(block(h));
            skips.push_back(h);
        }
        for (std::size_t l = levels - 1; l-- > 0;) {
            h = ops::concat_channels(ops::upsample2(h), skips[l]);
            h = block(block(h));
        }
        auto fw = take();
        auto fb = take();
        h = ops::conv2d(h, fw, fb);
        UTOPY_REQUIRE(next == p.size(), "prox: parameter list too long");
        return ops::add(v, h);
    }
    const std::size_t L = cfg.smooth_layers();
    Var<T> h = v;
    for (std::size_t l = 0; l < L; ++l) {
        auto w = take();
        auto b = take();
        h = ops::conv2d(h, w, b);
        if (l + 1 < L) h = detail::activate(h, cfg.activation);
    }
    UTOPY_REQUIRE(next == p.size(), "prox: parameter list too long");
    const T skip = static_cast<T>(cfg.skip());
    if (skip == T(0)) return h;
    return ops::add(ops::scale(v, skip), h);
}

/// Binds every tensor of `p` to the tape, as trainable leaves or constants.
template <class T>
std::vector<Var<T>> bind(Tape<T>& tape, const ProxParams<T>& p, bool trainable) {
    std::vector<Var<T>> out;
    out.reserve(p.tensors.size());
    for (const auto& t : p.tensors) out.push_back(trainable ? tape.parameter(t) : tape.constant(t));
    return out;
}

/// Eval-mode D(v) without gradients.
template <class T>
Tensor<T> prox_apply(const ProxParams<T>& p, const Tensor<T>& v) {
    Tape<T> tape;
    auto bound = bind(tape, p, false);
    auto bn = p.bn;
    return prox_forward<T>(p.config, bound, tape.constant(v), &bn, false).value();
}

namespace detail {

template <class T>
SpectralEstimate conv_norm(const Tensor<T>& w, std::size_t side, int iters, std::uint64_t seed) {
    const std::size_t pad = w.dim(2) / 2;
    auto fwd = [&](const Tensor<T>& x) { return kernels::conv2d(x, w, nullptr, pad); };
    auto adj = [&](const Tensor<T>& y) { return kernels::conv2d_transpose(y, w, pad); };
    Rng rng(seed, 0x7370656374);
    return power_iteration<T>(fwd, adj, {1, w.dim(1), side, side}, iters, 1e-12, rng);
}

} // namespace detail

/// Per-layer operator norms of the smooth branch at the configured side.
template <class T>
std::vector<double> layer_norms(const ProxParams<T>& p, int iters = 500) {
    UTOPY_REQUIRE(p.config.flavor == ProxFlavor::Smooth, "layer_norms: smooth flavor required");
    std::vector<double> out;
    for (std::size_t l = 0; l < p.config.smooth_layers(); ++l)
        out.push_back(detail::conv_norm(p.tensors[2 * l], p.config.side, iters, l).sigma);
    return out;
}

/// Rescales the smooth branch so that skip + act_lip^(L-1) * prod ||W_l||
/// equals beta_target: each layer is normalized to norm budget^(1/L).
/// Zero layers are left untouched and reported in p.warnings.
template <class T>
void spectral_normalize(ProxParams<T>& p, double beta_target, int iters) {
    UTOPY_REQUIRE(p.config.flavor == ProxFlavor::Smooth, "spectral_normalize: smooth flavor required");
    UTOPY_REQUIRE(beta_target > 0.0 && beta_target < 1.0, "spectral_normalize: beta_target must lie in (0, 1)");
    p.config.beta_target = beta_target;
    const std::size_t L = p.config.smooth_layers();
    const double act = activation_lipschitz(p.config.activation);
    const double budget = (1.0 - p.config.residual_fraction) * beta_target / std::pow(act, static_cast<double>(L - 1));
    const double per_layer = std::pow(budget, 1.0 / static_cast<double>(L));
    for (std::size_t l = 0; l < L; ++l) {
        auto& w = p.tensors[2 * l];
        const auto est = detail::conv_norm(w, p.config.side, iters, l);
        if (est.zero_operator || est.sigma == 0.0) {
            p.warnings.push_back("spectral_normalize: layer " + std::to_string(l) + " has zero weights, skipped");
            continue;
        }
        w = static_cast<T>(per_layer / est.sigma) * w;
    }
}

/// Upper bound skip + act_lip^(L-1) * prod ||W_l|| from fresh norm estimates.
template <class T>
double certified_lipschitz(const ProxParams<T>& p, int iters = 500) {
    UTOPY_REQUIRE(p.config.flavor == ProxFlavor::Smooth, "certified_lipschitz: smooth flavor required");
    double prod = 1.0;
    for (double s : layer_norms(p, iters)) prod *= s;
    const auto L = static_cast<double>(p.config.smooth_layers());
    return p.config.skip() + std::pow(activation_lipschitz(p.config.activation), L - 1.0) * prod;
}

struct LipschitzEstimate {
    double beta_hat = 0.0; // lower bound on Lip(D)
    std::size_t samples = 0;
};

/// Empirical lower bound on Lip(D): the largest expansion ratio over random
/// pairs at spread-out distances and over finite-difference directional probes.
template <class T>
LipschitzEstimate lipschitz_estimate(const ProxParams<T>& p, std::size_t samples, Rng& rng) {
    UTOPY_REQUIRE(samples >= 1, "lipschitz_estimate: samples must be >= 1");
    const std::size_t C = p.config.channels, S = p.config.side;
    LipschitzEstimate est;
    const std::size_t chunk = 64;
    for (std::size_t done = 0; done < samples; done += chunk) {
        const std::size_t B = std::min(chunk, samples - done);
        Tensor<T> u = rng.normal_tensor<T>({B, C, S, S}, 0.3, 0.5);
        Tensor<T> v = u;
        const std::size_t per = u.per_sample();
        for (std::size_t b = 0; b < B; ++b) {
            // Distances log-uniform in [1e-3, 1] per pixel; the smallest act as directional probes.
            const double d = std::pow(10.0, rng.uniform(-3.0, 0.0));
            for (std::size_t i = 0; i < per; ++i) v[b * per + i] += static_cast<T>(d * rng.normal());
        }
        const auto du = prox_apply(p, u), dv = prox_apply(p, v);
        for (std::size_t b = 0; b < B; ++b) {
            double num = 0, den = 0;
            for (std::size_t i = 0; i < per; ++i) {
                const double a = static_cast<double>(du[b * per + i]) - static_cast<double>(dv[b * per + i]);
                const double c = static_cast<double>(u[b * per + i]) - static_cast<double>(v[b * per + i]);
                num += a * a;
                den += c * c;
            }
            if (den > 0) est.beta_hat = std::max(est.beta_hat, std::sqrt(num / den));
        }
        est.samples += B;
    }
    return est;
}

} // namespace utopy
