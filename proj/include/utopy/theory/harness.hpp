#pragma once

// Fixed-point view of one shared unrolled stage:
//   T_alpha(x) = D(x - tau * grad g_alpha(x)).
// If D is beta-Lipschitz and L bounds the fidelity Hessian, T_alpha is a
// contraction with factor beta (1 + tau L) whenever that is below 1.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>

#include "json.hpp"
#include "utopy/core/power_iteration.hpp"
#include "utopy/data/dataset.hpp"
#include "utopy/data/noise.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/operators/fidelity.hpp"
#include "utopy/prox/prox_net.hpp"

namespace utopy {

/// D together with its certified Lipschitz bound (inf when unknown).
template <class T>
struct ProxMap {
    std::function<Tensor<T>(const Tensor<T>&)> apply;
    double beta_cert = std::numeric_limits<double>::infinity();
};

template <class T>
ProxMap<T> prox_map(const ProxParams<T>& p) {
    auto own = std::make_shared<const ProxParams<T>>(p);
    return {[own](const Tensor<T>& v) { return prox_apply(*own, v); }, certified_lipschitz(p)};
}

/// T_alpha applied to x.
template <class T>
Tensor<T> iteration_map(const ProxMap<T>& D, const HomotopyFidelity<T>& fid, double alpha, double tau, const Tensor<T>& x) {
    Tensor<T> v = x;
    if (tau != 0.0) axpy(v, static_cast<T>(-tau), grad_fidelity(fid, x, alpha));
    return D.apply(v);
}

/// sup over alpha of ||(1 - alpha) H^T H + alpha H_t^T H_t||, which by
/// convexity is attained at an endpoint.
template <class T>
double fidelity_lipschitz(const HomotopyFidelity<T>& fid, int iters = 2000) {
    Shape one = fid.image_shape();
    one[0] = 1;
    auto top = [&](const LinearOperator& H) {
        auto n = [&H](const Tensor<T>& v) { return H.normal(v); };
        Rng rng(0, 0x4c686174);
        return power_iteration<T>(n, n, one, iters, 1e-13, rng).sigma;
    };
    double L = top(fid.target());
    if (fid.has_synthetic()) L = std::max(L, top(fid.synthetic()));
    return L;
}

/// Analytic contraction quantities for (beta, tau, L).
struct ContractionSummary {
    double beta = 0, tau = 0, L = 0;
    double rho_product = 0;   // beta (1 + tau L): the certified factor
    double rho_additive = 0;  // beta + tau L
    double tau_max_ratio = 0; // (1 - beta) / (beta L)
    double tau_max_plain = 0; // (1 - beta) / L
    double jacobian_floor = 0;   // 1 - beta - tau L
    double drift_denominator = 0;  // 1 - beta (1 - tau L)
    double drift_constant = 0;     // tau L / (1 - beta (1 - tau L))

    bool certified() const { return rho_product < 1.0; }
};

inline double drift_bound(double beta, double tau, double L) {
    return tau * L / (1.0 - beta * (1.0 - tau * L));
}

inline ContractionSummary contraction_summary(double beta, double tau, double L) {
    ContractionSummary s;
    s.beta = beta;
    s.tau = tau;
    s.L = L;
    s.rho_product = beta * (1.0 + tau * L);
    s.rho_additive = beta + tau * L;
    s.tau_max_ratio = (1.0 - beta) / (beta * L);
    s.tau_max_plain = (1.0 - beta) / L;
    s.jacobian_floor = 1.0 - beta - tau * L;
    s.drift_denominator = 1.0 - beta * (1.0 - tau * L);
    s.drift_constant = drift_bound(beta, tau, L);
    return s;
}

template <class T>
struct FixedPointResult {
    Tensor<T> x;
    int iterations = 0;
    std::vector<double> residuals; // ||x_{j+1} - x_j|| per iteration
    bool certified = false;
};

struct FixedPointOptions {
    double tol = 1e-10;
    int max_iters = 5000;
    double L = 0.0; // fidelity Lipschitz bound; 0 estimates it
};

/// Iterates T_alpha from x0 until ||x_{j+1} - x_j|| <= tol (1 + ||x_j||).
/// If x0 already satisfies the test it is returned with 0 iterations;
/// otherwise beta_cert (1 + tau L) < 1 is required.
template <class T>
FixedPointResult<T> fixed_point(const ProxMap<T>& D, const HomotopyFidelity<T>& fid, double alpha, double tau,
                                const Tensor<T>& x0, const FixedPointOptions& opt = {}) {
    require_alpha(alpha);
    UTOPY_REQUIRE(tau >= 0.0 && std::isfinite(tau), "fixed_point: tau must be finite and >= 0");
    UTOPY_REQUIRE(opt.tol > 0.0 && opt.max_iters >= 1, "fixed_point: need tol > 0 and max_iters >= 1");
    FixedPointResult<T> r;
    const double L = opt.L > 0.0 ? opt.L : fidelity_lipschitz(fid);
    r.certified = contraction_summary(D.beta_cert, tau, L).certified();
    Tensor<T> x = x0;
    Tensor<T> next = iteration_map(D, fid, alpha, tau, x);
    double res = l2_norm(next - x);
    if (res <= opt.tol * (1.0 + l2_norm(x))) {
        r.x = std::move(x);
        return r;
    }
    if (!r.certified)
        throw ContractViolation("fixed_point: contraction not certified, beta (1 + tau L) = " +
                                std::to_string(D.beta_cert * (1.0 + tau * L)) + " >= 1");
    for (int j = 1; j <= opt.max_iters; ++j) {
        r.residuals.push_back(res);
        const double scale = 1.0 + l2_norm(x);
        x = std::move(next);
        r.iterations = j;
        if (res <= opt.tol * scale) {
            r.x = std::move(x);
            return r;
        }
        if (!std::isfinite(res)) throw NumericFailure("fixed_point: residual is not finite at iteration " + std::to_string(j));
        next = iteration_map(D, fid, alpha, tau, x);
        res = l2_norm(next - x);
    }
    throw ConvergenceFailure("fixed_point: no convergence after " + std::to_string(opt.max_iters) + " iterations", res);
}

struct ContractionEstimate {
    double rho_hat = 0;
    std::size_t samples = 0;
};

/// max ||T(u) - T(v)|| / ||u - v|| over sampled pairs; u ~ N(0.5, 0.3^2)
/// per pixel, v = u + d * N(0, I) with d log-uniform in [1e-3, 1].
template <class T>
ContractionEstimate contraction_factor(const std::function<Tensor<T>(const Tensor<T>&)>& map, const Shape& shape,
                                       std::size_t samples, Rng& rng) {
    UTOPY_REQUIRE(samples >= 2, "contraction_factor: need at least 2 samples");
    ContractionEstimate e;
    e.samples = samples;
    for (std::size_t s = 0; s < samples; ++s) {
        Tensor<T> u = rng.normal_tensor<T>(shape, 0.3, 0.5);
        const double d = std::exp(std::log(1e-3) * rng.uniform());
        Tensor<T> v = u;
        axpy(v, static_cast<T>(d), rng.normal_tensor<T>(shape));
        const double den = l2_norm(u - v);
        if (den == 0.0) continue;
        e.rho_hat = std::max(e.rho_hat, l2_norm(map(u) - map(v)) / den);
    }
    return e;
}

struct PathPoint {
    double alpha = 0;
    int iterations = 0;
    double residual = 0;
    double ratio_to_prev = std::numeric_limits<double>::quiet_NaN();
    double banach_bound = std::numeric_limits<double>::quiet_NaN();
    double drift_bound = 0;
    bool violation = false;
};

template <class T>
struct PathReport {
    std::vector<PathPoint> points;
    std::vector<Tensor<T>> fixed_points;
    ContractionSummary summary; // with beta_cert and L_hat
    double beta_hat = 0;        // sampled Lipschitz of D
    double rho_hat = 0;         // sampled contraction factor at alpha = 1
    double tol = 0;
    bool failed = false;
    std::string failure;

    double max_ratio() const {
        double m = 0;
        for (const auto& p : points)
            if (std::isfinite(p.ratio_to_prev)) m = std::max(m, p.ratio_to_prev);
        return m;
    }
    bool any_violation() const {
        for (const auto& p : points)
            if (p.violation) return true;
        return false;
    }

    std::string to_csv() const {
        std::string s = "alpha,iters,residual,ratio_to_prev,banach_bound,drift_bound,violation\n";
        char buf[256];
        for (const auto& p : points) {
            std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%d\n", p.alpha, p.iterations, p.residual,
                          p.ratio_to_prev, p.banach_bound, p.drift_bound, p.violation ? 1 : 0);
            s += buf;
        }
        return s;
    }

    nlohmann::json to_json() const {
        auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : points)
            pts.push_back({{"alpha", p.alpha},
                           {"iters", p.iterations},
                           {"residual", p.residual},
                           {"ratio_to_prev", num(p.ratio_to_prev)},
                           {"banach_bound", num(p.banach_bound)},
                           {"drift_bound", p.drift_bound},
                           {"violation", p.violation}});
        const auto& s = summary;
        return {{"points", pts},
                {"estimates",
                 {{"beta_cert", s.beta},
                  {"beta_hat", beta_hat},
                  {"L_hat", s.L},
                  {"tau", s.tau},
                  {"rho_hat", rho_hat},
                  {"rho_product", s.rho_product},
                  {"rho_additive", s.rho_additive},
                  {"tau_max_ratio", s.tau_max_ratio},
                  {"tau_max_plain", s.tau_max_plain},
                  {"jacobian_floor", s.jacobian_floor},
                  {"drift_denominator", s.drift_denominator},
                  {"drift_constant", s.drift_constant}}},
                {"tol", tol},
                {"max_ratio", max_ratio()},
                {"any_violation", any_violation()},
                {"failed", failed},
                {"failure", failure}};
    }
};

/// alpha grid 1, ..., 0 with `points` equally spaced values.
inline std::vector<double> alpha_grid(std::size_t points = 21) {
    UTOPY_REQUIRE(points >= 2, "alpha grid: need at least 2 points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = 1.0 - static_cast<double>(i) / static_cast<double>(points - 1);
    g.back() = 0.0;
    return g;
}

template <class T>
struct PathSetup {
    ProxMap<T> D;
    HomotopyFidelity<T> fid;
    double tau = 0;
    double L = 0;           // 0: estimate
    double beta_hat = 0;    // optional sampled Lipschitz of D, reported only
    FixedPointOptions fp;
};

/// Warm-started sweep of fixed points along a decreasing alpha grid.
/// Adjacent pairs are checked against
///   ||x1 - x2|| <= max_{x in {x1, x2}} ||T_a1(x) - T_a2(x)|| / (1 - rho),
/// rho = beta_cert (1 + tau L), plus the fixed-point tolerance slack.
template <class T>
PathReport<T> trace_path(const PathSetup<T>& setup, const std::vector<double>& grid) {
    UTOPY_REQUIRE(grid.size() >= 2, "trace_path: grid needs at least 2 points");
    UTOPY_REQUIRE(grid.front() == 1.0 && grid.back() == 0.0, "trace_path: grid must run from 1 to 0");
    for (std::size_t i = 1; i < grid.size(); ++i)
        UTOPY_REQUIRE(grid[i] < grid[i - 1], "trace_path: grid must be strictly decreasing");
    PathReport<T> rep;
    FixedPointOptions fp = setup.fp;
    fp.L = setup.L > 0.0 ? setup.L : fidelity_lipschitz(setup.fid);
    rep.summary = contraction_summary(setup.D.beta_cert, setup.tau, fp.L);
    rep.beta_hat = setup.beta_hat;
    rep.tol = fp.tol;
    UTOPY_REQUIRE(rep.summary.certified(), "trace_path: contraction not certified, beta (1 + tau L) = " +
                                               std::to_string(rep.summary.rho_product));
    const double rho = rep.summary.rho_product;
    {
        Rng rng(0, 0x72686f);
        Shape one = setup.fid.image_shape();
        auto T1 = [&](const Tensor<T>& x) {
            return iteration_map(setup.D, setup.fid, 1.0, setup.tau, x);
        };
        rep.rho_hat = contraction_factor<T>(T1, one, 64, rng).rho_hat;
    }
    Tensor<T> x = adjoint_init(setup.fid, 1.0);
    std::vector<double> errs; // a-posteriori distance to the true fixed point
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double a = grid[i];
        PathPoint pt;
        pt.alpha = a;
        pt.drift_bound = rep.summary.drift_constant;
        try {
            auto r = fixed_point(setup.D, setup.fid, a, setup.tau, x, fp);
            x = r.x;
            pt.iterations = r.iterations;
            // Residual of the returned point; distance to the fixed point <= res / (1 - rho).
            pt.residual = l2_norm(iteration_map(setup.D, setup.fid, a, setup.tau, x) - x);
        } catch (const ConvergenceFailure& e) {
            rep.failed = true;
            rep.failure = "alpha " + std::to_string(a) + ": " + e.what();
            break;
        }
        errs.push_back(pt.residual / (1.0 - rho));
        rep.fixed_points.push_back(x);
        if (i > 0) {
            const double da = grid[i - 1] - a;
            const auto& xp = rep.fixed_points[i - 1];
            pt.ratio_to_prev = l2_norm(x - xp) / da;
            double gap = 0;
            for (const Tensor<T>* at : std::array<const Tensor<T>*, 2>{&xp, &x}) {
                const auto t1 = iteration_map(setup.D, setup.fid, grid[i - 1], setup.tau, *at);
                const auto t2 = iteration_map(setup.D, setup.fid, a, setup.tau, *at);
                gap = std::max(gap, l2_norm(t1 - t2));
            }
            pt.banach_bound = gap / (1.0 - rho) / da;
            const double slack = (errs[i] + errs[i - 1]) / da;
            pt.violation = pt.ratio_to_prev > pt.banach_bound + slack;
        }
        rep.points.push_back(pt);
    }
    return rep;
}

struct MonitorRow {
    int epoch = 0;
    double alpha = 0;
    double delta_alpha = std::numeric_limits<double>::quiet_NaN();
    double delta_x = std::numeric_limits<double>::quiet_NaN();
    bool gap = false; // previous epoch missing
};

/// (|Delta alpha|, ||Delta x||) between consecutive logged epochs. The first
/// row and rows after a missing epoch carry NaN deltas.
template <class T>
std::vector<MonitorRow> training_path_monitor(const std::vector<int>& epochs, const std::vector<double>& alphas,
                                              const std::vector<Tensor<T>>& solutions) {
    UTOPY_REQUIRE(epochs.size() == alphas.size() && alphas.size() == solutions.size(),
                  "path monitor: epochs, alphas and solutions must align");
    std::vector<MonitorRow> out;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        MonitorRow r;
        r.epoch = epochs[i];
        r.alpha = alphas[i];
        if (i > 0) {
            UTOPY_REQUIRE(epochs[i] > epochs[i - 1], "path monitor: epochs must increase");
            if (epochs[i] == epochs[i - 1] + 1) {
                r.delta_alpha = std::abs(alphas[i] - alphas[i - 1]);
                r.delta_x = l2_norm(solutions[i] - solutions[i - 1]);
            } else {
                r.gap = true;
            }
        }
        out.push_back(r);
    }
    return out;
}

inline std::string monitor_csv(const std::vector<MonitorRow>& rows) {
    std::string s = "epoch,alpha,delta_alpha,delta_x,gap\n";
    char buf[192];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d\n", r.epoch, r.alpha, r.delta_alpha, r.delta_x,
                      r.gap ? 1 : 0);
        s += buf;
    }
    return s;
}

/// Small compressed-sensing problem for the harness.
struct DeskTheoryConfig {
    std::size_t side = 8;
    double ratio = 0.3;
    double eta = 0.1;
    double beta_target = 0.5;
    std::vector<std::size_t> widths{8, 8, 8};
    double tau_scale = 0.75; // tau = tau_scale / L_hat
    double snr_db = 35.0;
    std::size_t batch = 1;
    std::uint64_t seed = 0;
    bool synthetic_equals_target = false;
    std::size_t grid_points = 21;
    double tol = 1e-10;
};

template <class T>
struct DeskTheory {
    ProxParams<T> prox;
    std::shared_ptr<const LinearOperator> H, H_t;
    Tensor<T> x_true;
    PathSetup<T> setup;
};

template <class T>
DeskTheory<T> build_desk_theory(const DeskTheoryConfig& c) {
    const Rng root(c.seed);
    auto ops = make_cs_pair({c.side, c.ratio, c.eta, c.seed});
    auto H = std::make_shared<const LinearOperator>(std::move(ops.H));
    auto H_t = c.synthetic_equals_target ? H : std::make_shared<const LinearOperator>(std::move(ops.H_t));
    Rng prng = root.substream("prox");
    auto prox = init_prox<T>(ProxConfig::smooth(c.side, c.beta_target, c.widths), prng);
    Tensor<T> x_true = synth_dataset(c.batch, c.side, c.seed).images.template cast<T>();
    const Rng noise = root.substream("noise");
    auto y = simulate_measurements(*H, x_true, c.snr_db, noise.substream("y"));
    auto yt = simulate_measurements(*H_t, x_true, c.snr_db, noise.substream(c.synthetic_equals_target ? "y" : "y_t"));
    HomotopyFidelity<T> fid(H, std::move(y), H_t, std::move(yt));
    const double L = fidelity_lipschitz(fid);
    Rng brng = root.substream("beta");
    const double beta_hat = lipschitz_estimate(prox, 256, brng).beta_hat;
    FixedPointOptions fp;
    fp.tol = c.tol;
    fp.L = L;
    PathSetup<T> setup{prox_map(prox), std::move(fid), c.tau_scale / L, L, beta_hat, fp};
    return DeskTheory<T>{std::move(prox), std::move(H), std::move(H_t), std::move(x_true), std::move(setup)};
}

} // namespace utopy
