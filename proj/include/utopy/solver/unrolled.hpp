#pragma once

// K-stage unrolled accelerated projected gradient:
//   x^0 = z^0 = blended adjoint initialization
//   x^k = D_k(z^{k-1} - tau_k * grad g_alpha(z^{k-1}))
//   z^k = x^k - t_k * (x^k - x^{k-1})

#include <memory>
#include <optional>

#include "utopy/operators/fidelity.hpp"
#include "utopy/prox/prox_net.hpp"

namespace utopy {

template <class T>
struct Stage {
    ProxParams<T> prox;
    Tensor<T> tau{Shape{1}, T(1e-3)};
    Tensor<T> accel{Shape{1}, T(0)};
};

template <class T>
struct UnrollModel {
    std::vector<Stage<T>> stages;
    bool shared_prox = false; // every stage uses stages[0].prox

    std::size_t K() const { return stages.size(); }

    const ProxParams<T>& prox(std::size_t k) const { return shared_prox ? stages[0].prox : stages[k].prox; }
    ProxParams<T>& prox(std::size_t k) { return shared_prox ? stages[0].prox : stages[k].prox; }

    /// Trainable tensors in a fixed order: per stage tau, accel, then that
    /// stage's prox tensors (only stage 0's when shared).
    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (std::size_t k = 0; k < K(); ++k) {
            out.push_back(&stages[k].tau);
            out.push_back(&stages[k].accel);
            if (!shared_prox || k == 0)
                for (auto& t : stages[k].prox.tensors) out.push_back(&t);
        }
        return out;
    }
    std::vector<const Tensor<T>*> parameters() const {
        std::vector<const Tensor<T>*> out;
        for (auto* p : const_cast<UnrollModel*>(this)->parameters()) out.push_back(p);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += p->numel();
        return n;
    }
};

struct UnrollInit {
    std::size_t K = 5;
    double tau = 1e-3;
    double accel = 0.0;
    bool shared_prox = false;
};

template <class T>
UnrollModel<T> make_unroll_model(const ProxConfig& prox, const UnrollInit& init, Rng& rng) {
    UTOPY_REQUIRE(init.K >= 1, "unroll model: K must be >= 1");
    UTOPY_REQUIRE(std::isfinite(init.tau) && std::isfinite(init.accel), "unroll model: tau and t must be finite");
    UnrollModel<T> m;
    m.shared_prox = init.shared_prox;
    for (std::size_t k = 0; k < init.K; ++k) {
        Stage<T> s;
        Rng stage_rng = rng.split(k);
        if (!init.shared_prox || k == 0) s.prox = init_prox<T>(prox, stage_rng);
        else s.prox.config = prox;
        s.tau = Tensor<T>({1}, static_cast<T>(init.tau));
        s.accel = Tensor<T>({1}, static_cast<T>(init.accel));
        m.stages.push_back(std::move(s));
    }
    return m;
}

/// Parameter nodes of a model bound to a tape.
template <class T>
struct BoundModel {
    std::vector<Var<T>> all; // same order as UnrollModel::parameters()
    std::vector<Var<T>> tau, accel;
    std::vector<std::vector<Var<T>>> prox;
};

template <class T>
BoundModel<T> bind(Tape<T>& tape, const UnrollModel<T>& m, bool trainable) {
    BoundModel<T> b;
    for (const auto* p : m.parameters()) b.all.push_back(trainable ? tape.parameter(*p) : tape.constant(*p));
    std::size_t i = 0;
    for (std::size_t k = 0; k < m.K(); ++k) {
        b.tau.push_back(b.all[i++]);
        b.accel.push_back(b.all[i++]);
        if (!m.shared_prox || k == 0) {
            std::vector<Var<T>> ps(b.all.begin() + static_cast<std::ptrdiff_t>(i),
                                   b.all.begin() + static_cast<std::ptrdiff_t>(i + m.stages[k].prox.tensors.size()));
            i += ps.size();
            b.prox.push_back(std::move(ps));
        } else {
            b.prox.push_back(b.prox[0]);
        }
    }
    return b;
}

/// grad g_alpha(z) = N_alpha z - b_alpha with N_alpha self-adjoint.
template <class T>
Var<T> fidelity_gradient_node(const HomotopyFidelity<T>& fid, double alpha, Var<T> z, Var<T> b_alpha) {
    auto normal = [&fid, alpha](const Tensor<T>& v) { return fidelity_hessian_apply(fid, v, alpha); };
    return ops::sub(ops::linear_map<T>(z, normal, normal, "fidelity_normal"), b_alpha);
}

template <class T>
struct StageState {
    Var<T> x; // x^k
    Var<T> z; // z^k
};

/// One stage on a tape.
template <class T>
StageState<T> unroll_step(const ProxConfig& cfg, std::span<const Var<T>> prox, Var<T> tau, Var<T> accel,
                          std::vector<ops::BatchNormState<T>>* bn, bool training, const HomotopyFidelity<T>& fid,
                          double alpha, Var<T> b_alpha, Var<T> x_prev, Var<T> z) {
    auto grad = fidelity_gradient_node(fid, alpha, z, b_alpha);
    auto v = ops::sub(z, ops::smul(tau, grad));
    auto x = prox_forward<T>(cfg, prox, v, bn, training);
    auto z_next = ops::sub(x, ops::smul(accel, ops::sub(x, x_prev)));
    return {x, z_next};
}

template <class T>
struct UnrollTrace {
    Var<T> output;
    std::vector<Tensor<T>> iterates; // x^0 .. x^K when logging
};

/// Full forward pass on a tape. BN statistics are updated only when training.
template <class T>
UnrollTrace<T> unroll_forward(Tape<T>& tape, UnrollModel<T>& model, const BoundModel<T>& bound,
                              const HomotopyFidelity<T>& fid, double alpha, bool training, bool log_iterates = false) {
    require_alpha(alpha);
    UnrollTrace<T> trace;
    auto b_alpha = tape.constant(adjoint_init(fid, alpha));
    Var<T> x = b_alpha, z = b_alpha;
    if (log_iterates) trace.iterates.push_back(x.value());
    for (std::size_t k = 0; k < model.K(); ++k) {
        auto& prox = model.prox(k);
        try {
            auto bn = training ? &prox.bn : nullptr;
            std::vector<ops::BatchNormState<T>> frozen;
            if (!training) {
                frozen = prox.bn;
                bn = &frozen;
            }
            auto st = unroll_step<T>(prox.config, bound.prox[k], bound.tau[k], bound.accel[k], bn, training, fid, alpha,
                                     b_alpha, x, z);
            x = st.x;
            z = st.z;
        } catch (const NumericFailure& e) {
            throw NumericFailure("stage " + std::to_string(k + 1) + ": " + e.what());
        }
        if (log_iterates) trace.iterates.push_back(x.value());
    }
    trace.output = x;
    return trace;
}

/// Eval-mode reconstruction for a given alpha.
template <class T>
Tensor<T> reconstruct(const UnrollModel<T>& model, const HomotopyFidelity<T>& fid, double alpha,
                      std::vector<Tensor<T>>* iterates = nullptr) {
    Tape<T> tape;
    auto bound = bind(tape, model, false);
    auto& m = const_cast<UnrollModel<T>&>(model); // eval mode leaves statistics untouched
    auto trace = unroll_forward(tape, m, bound, fid, alpha, false, iterates != nullptr);
    if (iterates) *iterates = std::move(trace.iterates);
    return trace.output.value();
}

/// Eval-mode single stage k (0-based) on plain tensors; returns (x^k, z^k).
template <class T>
std::pair<Tensor<T>, Tensor<T>> unroll_step(const UnrollModel<T>& model, std::size_t k, const HomotopyFidelity<T>& fid,
                                            double alpha, const Tensor<T>& x_prev, const Tensor<T>& z) {
    UTOPY_REQUIRE(k < model.K(), "unroll_step: stage index out of range");
    require_alpha(alpha);
    Tape<T> tape;
    const auto& prox = model.prox(k);
    auto ps = bind(tape, prox, false);
    auto bn = prox.bn;
    try {
        auto st = unroll_step<T>(prox.config, ps, tape.constant(model.stages[k].tau), tape.constant(model.stages[k].accel),
                                 &bn, false, fid, alpha, tape.constant(adjoint_init(fid, alpha)), tape.constant(x_prev),
                                 tape.constant(z));
        return {st.x.value(), st.z.value()};
    } catch (const NumericFailure& e) {
        throw NumericFailure("stage " + std::to_string(k + 1) + ": " + e.what());
    }
}

/// Test-time inference: alpha = 0, so only (H, y) are used.
template <class T>
Tensor<T> infer(const UnrollModel<T>& model, std::shared_ptr<const LinearOperator> H, const Tensor<T>& y) {
    HomotopyFidelity<T> fid(std::move(H), y);
    return reconstruct(model, fid, 0.0);
}

} // namespace utopy
