#pragma once

#include <atomic>
#include <memory>

#include "utopy/operators/linear_operator.hpp"

namespace utopy {

/// g_alpha(x) = (1 - alpha) * 0.5||y - Hx||^2 + alpha * 0.5||y_t - H_t x||^2.
///
/// The synthetic pair (H_t, y_t) may be absent; it is then only legal to
/// evaluate at alpha = 0. Every access to the synthetic pair is counted so
/// callers can check that target-only runs never touch it. At alpha = 0 the
/// synthetic branch is skipped entirely, which makes results independent of
/// its contents bit for bit.
template <class T>
class HomotopyFidelity {
public:
    HomotopyFidelity(std::shared_ptr<const LinearOperator> H, Tensor<T> y,
                     std::shared_ptr<const LinearOperator> H_t = nullptr, Tensor<T> y_t = {})
        : H_(std::move(H)), y_(std::move(y)), H_t_(std::move(H_t)), y_t_(std::move(y_t)),
          synthetic_reads_(std::make_shared<std::atomic<std::size_t>>(0)) {
        UTOPY_REQUIRE(H_ != nullptr, "fidelity: target operator is required");
        UTOPY_REQUIRE(y_.rank() >= 1 && y_.per_sample() == H_->out_size(),
                      "fidelity: y shape " + shape_str(y_.shape()) + " does not match H output");
        if (H_t_) {
            UTOPY_REQUIRE(y_t_.rank() >= 1 && y_t_.per_sample() == H_t_->out_size(),
                          "fidelity: y_t shape " + shape_str(y_t_.shape()) + " does not match H_t output");
            UTOPY_REQUIRE(y_t_.dim(0) == y_.dim(0), "fidelity: y and y_t batch sizes differ");
            UTOPY_REQUIRE(H_t_->in_size() == H_->in_size(), "fidelity: H and H_t act on different spaces");
        }
    }

    const LinearOperator& target() const { return *H_; }
    const Tensor<T>& y() const { return y_; }
    std::size_t batch() const { return y_.dim(0); }
    bool has_synthetic() const { return H_t_ != nullptr; }

    const LinearOperator& synthetic() const {
        UTOPY_REQUIRE(H_t_ != nullptr, "fidelity: synthetic operator requested but not provided");
        synthetic_reads_->fetch_add(1, std::memory_order_relaxed);
        return *H_t_;
    }
    const Tensor<T>& y_t() const {
        UTOPY_REQUIRE(H_t_ != nullptr, "fidelity: synthetic measurements requested but not provided");
        synthetic_reads_->fetch_add(1, std::memory_order_relaxed);
        return y_t_;
    }

    std::shared_ptr<const LinearOperator> target_ptr() const { return H_; }
    std::shared_ptr<const LinearOperator> synthetic_ptr() const { return H_t_; }

    std::size_t synthetic_reads() const { return synthetic_reads_->load(); }

    /// Shares the read counter with another fidelity (e.g. per-batch views).
    void share_counter(const HomotopyFidelity& other) { synthetic_reads_ = other.synthetic_reads_; }

    Shape image_shape() const {
        Shape s{batch()};
        s.insert(s.end(), H_->in_shape().begin(), H_->in_shape().end());
        return s;
    }

private:
    std::shared_ptr<const LinearOperator> H_;
    Tensor<T> y_;
    std::shared_ptr<const LinearOperator> H_t_;
    Tensor<T> y_t_;
    std::shared_ptr<std::atomic<std::size_t>> synthetic_reads_;
};

inline void require_alpha(double alpha) {
    UTOPY_REQUIRE(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1], got " + std::to_string(alpha));
}

namespace detail {

template <class T>
double half_sq_residual(const LinearOperator& H, const Tensor<T>& x, const Tensor<T>& y) {
    const Tensor<T> r = H.apply(x);
    require_same_shape(r.shape(), y.shape(), "fidelity residual");
    double s = 0.0;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        const double d = static_cast<double>(r[i]) - static_cast<double>(y[i]);
        s += d * d;
    }
    return 0.5 * s;
}

template <class T>
Tensor<T> residual_gradient(const LinearOperator& H, const Tensor<T>& x, const Tensor<T>& y) {
    Tensor<T> r = H.apply(x);
    require_same_shape(r.shape(), y.shape(), "fidelity residual");
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] -= y[i];
    return H.adjoint(r);
}

} // namespace detail

/// g_alpha(x), summed over the batch.
template <class T>
double objective(const HomotopyFidelity<T>& fid, const Tensor<T>& x, double alpha) {
    require_alpha(alpha);
    double g0 = 0.0, g1 = 0.0;
    if (alpha < 1.0) g0 = detail::half_sq_residual(fid.target(), x, fid.y());
    if (alpha > 0.0) g1 = detail::half_sq_residual(fid.synthetic(), x, fid.y_t());
    return (1.0 - alpha) * g0 + alpha * g1;
}

/// alpha * H_t^T(H_t x - y_t) + (1 - alpha) * H^T(H x - y), the exact gradient of g_alpha.
template <class T>
Tensor<T> grad_fidelity(const HomotopyFidelity<T>& fid, const Tensor<T>& x, double alpha) {
    require_alpha(alpha);
    if (alpha == 0.0) return detail::residual_gradient(fid.target(), x, fid.y());
    if (alpha == 1.0) return detail::residual_gradient(fid.synthetic(), x, fid.y_t());
    Tensor<T> g = static_cast<T>(1.0 - alpha) * detail::residual_gradient(fid.target(), x, fid.y());
    axpy(g, static_cast<T>(alpha), detail::residual_gradient(fid.synthetic(), x, fid.y_t()));
    return g;
}

/// alpha * H_t^T y_t + (1 - alpha) * H^T y.
template <class T>
Tensor<T> adjoint_init(const HomotopyFidelity<T>& fid, double alpha) {
    require_alpha(alpha);
    if (alpha == 0.0) return fid.target().adjoint(fid.y());
    if (alpha == 1.0) return fid.synthetic().adjoint(fid.y_t());
    Tensor<T> z = static_cast<T>(1.0 - alpha) * fid.target().adjoint(fid.y());
    axpy(z, static_cast<T>(alpha), fid.synthetic().adjoint(fid.y_t()));
    return z;
}

/// Hessian of g_alpha applied to v: ((1 - alpha) H^T H + alpha H_t^T H_t) v.
/// Its spectral norm is the Lipschitz constant of grad g_alpha.
template <class T>
Tensor<T> fidelity_hessian_apply(const HomotopyFidelity<T>& fid, const Tensor<T>& v, double alpha) {
    require_alpha(alpha);
    if (alpha == 0.0) return fid.target().normal(v);
    if (alpha == 1.0) return fid.synthetic().normal(v);
    Tensor<T> h = static_cast<T>(1.0 - alpha) * fid.target().normal(v);
    axpy(h, static_cast<T>(alpha), fid.synthetic().normal(v));
    return h;
}

} // namespace utopy
