#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>

#include "utopy/core/gradcheck.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/solver/checkpoint.hpp"
#include "utopy/solver/fista.hpp"
#include "utopy/solver/unrolled.hpp"

using namespace utopy;
using Td = Tensor<double>;

namespace {

using OpPtr = std::shared_ptr<const LinearOperator>;

// Identity prox: UNet at initialization.
UnrollModel<double> identity_model(std::size_t K, std::size_t side, double tau, double t) {
    Rng rng(0);
    return make_unroll_model<double>(ProxConfig::unet({2}, side), {K, tau, t, false}, rng);
}

// Square, well-conditioned dense operator on [1, s, s] images: I + small noise.
OpPtr well_posed(std::size_t side, std::uint64_t seed) {
    const std::size_t n = side * side;
    Rng rng(seed);
    Td M = rng.normal_tensor<double>({n, n}, 0.1 / std::sqrt(static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) M[i * n + i] += 1.0;
    return std::make_shared<const LinearOperator>(LinearOperator::dense(M, {1, side, side}));
}

Eigen::VectorXd least_squares(const LinearOperator& H, const Td& y) {
    const auto m = static_cast<Eigen::Index>(H.matrix().dim(0)), n = static_cast<Eigen::Index>(H.matrix().dim(1));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(H.matrix().data(), m, n);
    Eigen::Map<const Eigen::VectorXd> b(y.data(), m);
    // Normal equations A^T A x = A^T b.
    return (A.transpose() * A).ldlt().solve(A.transpose() * b);
}

} // namespace

TEST(UnrollStep, NoOpStage) {
    auto m = identity_model(1, 4, 0.0, 0.0);
    Rng rng(1);
    auto p = make_cs_pair({4, 0.5, 0.0, 0});
    auto H = std::make_shared<const LinearOperator>(p.H);
    HomotopyFidelity<double> fid(H, rng.normal_tensor<double>({2, H->out_size()}));
    auto z = rng.normal_tensor<double>({2, 1, 4, 4});
    auto [x, zn] = unroll_step(m, 0, fid, 0.0, rng.normal_tensor<double>({2, 1, 4, 4}), z);
    EXPECT_TRUE(x == z);
    EXPECT_TRUE(zn == z);
}

TEST(UnrollStep, PlainGradientStep) {
    auto m = identity_model(1, 4, 0.3, 0.0);
    Rng rng(2);
    auto p = make_cs_pair({4, 0.5, 0.0, 0});
    auto H = std::make_shared<const LinearOperator>(p.H);
    HomotopyFidelity<double> fid(H, rng.normal_tensor<double>({1, H->out_size()}));
    auto z = rng.normal_tensor<double>({1, 1, 4, 4});
    auto [x, zn] = unroll_step(m, 0, fid, 0.0, z, z);
    Td expect = z - 0.3 * H->adjoint(H->apply(z) - fid.y());
    EXPECT_LE(max_abs_diff(x, expect), 1e-14);
}

TEST(UnrollStep, RepeatedStepsReachLeastSquares) {
    auto H = well_posed(4, 3);
    Rng rng(4);
    auto y = rng.normal_tensor<double>({1, 16});
    HomotopyFidelity<double> fid(H, y);
    auto normal = [&](const Td& v) { return H->normal(v); };
    Rng pr(5);
    const double L = power_iteration<double>(normal, normal, {1, 1, 4, 4}, 2000, 1e-14, pr).sigma;
    auto m = identity_model(1, 4, 1.0 / L, 0.0);
    Td x = adjoint_init(fid, 0.0);
    for (int s = 0; s < 50; ++s) x = unroll_step(m, 0, fid, 0.0, x, x).first;
    auto ls = least_squares(*H, y);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(x[i], ls(static_cast<Eigen::Index>(i)), 1e-6);
}

TEST(UnrollStep, NonFiniteNamesStage) {
    Rng rng(6);
    auto m = make_unroll_model<float>(ProxConfig::unet({2}, 4), {2, 1.0, 0.0, false}, rng);
    m.stages[1].tau = Tensor<float>({1}, 1e38f);
    // Non-orthonormal rows, so the gradient at the adjoint initialization is nonzero.
    auto H = well_posed(4, 21);
    HomotopyFidelity<float> fid(H, rng.normal_tensor<float>({1, H->out_size()}, 1e3));
    try {
        reconstruct(m, fid, 0.0);
        FAIL() << "expected NumericFailure";
    } catch (const NumericFailure& e) {
        EXPECT_NE(std::string(e.what()).find("stage 2"), std::string::npos) << e.what();
    }
}

TEST(UnrollForward, SingleNoOpStageReturnsInit) {
    auto m = identity_model(1, 4, 0.0, 0.0);
    Rng rng(7);
    auto p = make_cs_pair({4, 0.5, 0.25, 0});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    HomotopyFidelity<double> fid(H, rng.normal_tensor<double>({2, H->out_size()}), Ht,
                                 rng.normal_tensor<double>({2, Ht->out_size()}));
    for (double a : {0.0, 0.4, 1.0}) EXPECT_TRUE(reconstruct(m, fid, a) == adjoint_init(fid, a));
}

TEST(UnrollForward, IdentityProxIsTextbookGradientDescent) {
    const std::size_t K = 6;
    auto m = identity_model(K, 4, 0.7, 0.0);
    for (std::size_t k = 0; k < K; ++k) m.stages[k].tau = Td({1}, 0.2 + 0.1 * static_cast<double>(k));
    Rng rng(8);
    auto H = well_posed(4, 9);
    HomotopyFidelity<double> fid(H, rng.normal_tensor<double>({1, 16}));
    std::vector<Td> its;
    auto out = reconstruct(m, fid, 0.0, &its);
    Td x = H->adjoint(fid.y());
    ASSERT_EQ(its.size(), K + 1);
    for (std::size_t k = 0; k < K; ++k) {
        x = x - (0.2 + 0.1 * static_cast<double>(k)) * H->adjoint(H->apply(x) - fid.y());
        EXPECT_LE(max_abs_diff(its[k + 1], x), 1e-10);
    }
    EXPECT_LE(max_abs_diff(out, x), 1e-10);
}

TEST(UnrollForward, AlphaZeroIgnoresSyntheticPair) {
    Rng rng(10);
    auto m = make_unroll_model<double>(ProxConfig::unet({2, 4}, 8), {3, 0.5, 0.1, false}, rng);
    for (auto& s : m.stages) s.prox.tensors[s.prox.tensors.size() - 2] = rng.normal_tensor<double>({1, 2, 1, 1});
    auto p = make_cs_pair({8, 0.3, 0.2, 1});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    auto y = rng.normal_tensor<double>({2, H->out_size()});
    HomotopyFidelity<double> a(H, y, Ht, rng.normal_tensor<double>({2, Ht->out_size()}));
    HomotopyFidelity<double> b(H, y, H, rng.normal_tensor<double>({2, H->out_size()}, 100.0));
    const auto ra = reconstruct(m, a, 0.0);
    EXPECT_TRUE(ra == reconstruct(m, b, 0.0));
    EXPECT_TRUE(ra == infer(m, H, y));
    EXPECT_EQ(a.synthetic_reads(), 0u);
}

TEST(Infer, MatchesAlphaZeroOnHundredInputs) {
    Rng rng(11);
    auto m = make_unroll_model<double>(ProxConfig::unet({2}, 4), {2, 0.5, 0.2, false}, rng);
    for (auto& s : m.stages) s.prox.tensors[s.prox.tensors.size() - 2] = rng.normal_tensor<double>({1, 2, 1, 1});
    auto p = make_cs_pair({4, 0.5, 0.25, 2});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    for (int i = 0; i < 100; ++i) {
        auto y = rng.normal_tensor<double>({1, H->out_size()});
        HomotopyFidelity<double> fid(H, y, Ht, rng.normal_tensor<double>({1, Ht->out_size()}));
        const auto r = infer(m, H, y);
        EXPECT_TRUE(r == reconstruct(m, fid, 0.0));
        EXPECT_TRUE(r == infer(m, H, y));
    }
}

TEST(Infer, ZeroMeasurementGivesZero) {
    auto m = identity_model(3, 8, 0.5, 0.3);
    auto p = make_cs_pair({8, 0.3, 0.0, 2});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto out = infer(m, H, Td({2, H->out_size()}));
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(UnrollForward, EndToEndGradientsUnet) {
    Rng rng(12);
    auto m = make_unroll_model<double>(ProxConfig::unet({2, 3}, 8), {2, 0.6, 0.2, false}, rng);
    for (auto& s : m.stages) s.prox.tensors[s.prox.tensors.size() - 2] = rng.normal_tensor<double>({1, 2, 1, 1});
    auto p = make_cs_pair({8, 0.3, 0.2, 1});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    auto xs = rng.uniform_tensor<double>({3, 1, 8, 8});
    HomotopyFidelity<double> fid(H, H->apply(xs), Ht, Ht->apply(xs));
    std::vector<Td> params;
    for (auto* t : m.parameters()) params.push_back(*t);
    ScalarGraph<double> f = [&](Tape<double>& t, std::span<const Var<double>> ps) {
        UnrollModel<double> local = m;
        BoundModel<double> b = bind(t, local, false);
        // Rebind every slot to the checked nodes.
        std::size_t i = 0;
        for (std::size_t k = 0; k < local.K(); ++k) {
            b.tau[k] = ps[i++];
            b.accel[k] = ps[i++];
            for (auto& v : b.prox[k]) v = ps[i++];
        }
        auto out = unroll_forward(t, local, b, fid, 0.4, true).output;
        return ops::mean(ops::square(ops::sub(out, t.constant(xs))));
    };
    auto r = finite_diff_check<double>(f, params, 1e-6, 6, 1);
    EXPECT_LE(r.max_rel_error, 1e-4);
    // tau and t of every stage are probed in full.
    for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t base = k * (2 + m.stages[0].prox.tensors.size());
        EXPECT_LE(r.per_param[base], 1e-4);
        EXPECT_LE(r.per_param[base + 1], 1e-4);
    }
}

TEST(UnrollForward, EndToEndGradientsSmoothShared) {
    Rng rng(13);
    auto m = make_unroll_model<double>(ProxConfig::smooth(8, 0.5, {3}), {3, 0.6, 0.2, true}, rng);
    auto p = make_cs_pair({8, 0.3, 0.2, 1});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    auto xs = rng.uniform_tensor<double>({2, 1, 8, 8});
    HomotopyFidelity<double> fid(H, H->apply(xs), Ht, Ht->apply(xs));
    std::vector<Td> params;
    for (auto* t : m.parameters()) params.push_back(*t);
    EXPECT_EQ(params.size(), 2 * 3 + m.stages[0].prox.tensors.size());
    ScalarGraph<double> f = [&](Tape<double>& t, std::span<const Var<double>> ps) {
        UnrollModel<double> local = m;
        BoundModel<double> b = bind(t, local, false);
        std::size_t i = 0;
        for (std::size_t k = 0; k < local.K(); ++k) {
            b.tau[k] = ps[i++];
            b.accel[k] = ps[i++];
            if (k == 0)
                for (auto& v : b.prox[0]) v = ps[i++];
            else
                b.prox[k] = b.prox[0];
        }
        auto out = unroll_forward(t, local, b, fid, 0.7, true).output;
        return ops::mean(ops::square(ops::sub(out, t.constant(xs))));
    };
    EXPECT_LE(finite_diff_check<double>(f, params, 1e-6).max_rel_error, 1e-4);
}

TEST(Checkpoint, RoundTripBitwise) {
    Rng rng(14);
    for (bool shared : {false, true}) {
        auto m = make_unroll_model<float>(ProxConfig::unet({4, 8}, 16), {3, 0.01, 0.05, shared}, rng);
        for (auto* t : m.parameters()) *t = rng.normal_tensor<float>(t->shape());
        for (auto& s : m.stages)
            for (auto& st : s.prox.bn) st.running_mean = rng.normal_tensor<float>(st.running_mean.shape());
        const auto dir = std::filesystem::temp_directory_path() / "utopy_ckpt";
        std::filesystem::create_directories(dir);
        save_model(dir / "model", m);
        auto back = load_model<float>(dir / "model");
        ASSERT_EQ(back.K(), 3u);
        EXPECT_EQ(back.shared_prox, shared);
        auto a = m.parameters();
        auto b = back.parameters();
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i] == *b[i]);
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t l = 0; l < m.prox(k).bn.size(); ++l)
                EXPECT_TRUE(m.prox(k).bn[l].running_mean == back.prox(k).bn[l].running_mean);
        auto H = std::make_shared<const LinearOperator>(make_cs_pair({16, 0.3, 0.0, 0}).H);
        auto y = rng.normal_tensor<float>({2, H->out_size()});
        EXPECT_TRUE(infer(m, H, y) == infer(back, H, y));
    }
    EXPECT_THROW(load_model<float>("/nonexistent/model"), MissingPrerequisite);
}

TEST(Fista, SoftThreshold) {
    EXPECT_EQ(soft_threshold(3, 1), 2);
    EXPECT_EQ(soft_threshold(-0.5, 1), 0);
    EXPECT_EQ(soft_threshold(-3, 1), -2);
}

TEST(Fista, HaarIsOrthonormal) {
    Rng rng(15);
    auto x = rng.normal_tensor<double>({2, 1, 8, 8});
    auto c = haar2d(x);
    EXPECT_NEAR(l2_norm(c), l2_norm(x), 1e-12);
    EXPECT_LE(max_abs_diff(haar2d(c, true), x), 1e-12);
    // Constant image: single coarse coefficient.
    auto k = haar2d(Td({1, 1, 8, 8}, 1.0));
    EXPECT_NEAR(k[0], 8.0, 1e-12);
    for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(k[i], 0.0, 1e-12);
}

TEST(Fista, LambdaZeroMatchesNormalEquations) {
    auto H = well_posed(4, 16);
    Rng rng(17);
    auto y = rng.normal_tensor<double>({1, 16});
    auto res = fista_classical(*H, y, 0.0, 500);
    auto ls = least_squares(*H, y);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(res.x[i], ls(static_cast<Eigen::Index>(i)), 1e-5);
    for (std::size_t k = 1; k < res.objective.size(); ++k) EXPECT_LE(res.objective[k], res.objective[k - 1] + 1e-9);
}

TEST(Fista, SparseHaarRecovery) {
    const std::size_t side = 8, n = 64, m = 32;
    Rng rng(18);
    // Haar-sparse ground truth: 5 nonzero coefficients.
    Td c({1, 1, side, side});
    auto perm = rng.permutation(n);
    for (int i = 0; i < 5; ++i) c[perm[i]] = rng.uniform(1.0, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
    auto xs = haar2d(c, true);
    auto A = rng.normal_tensor<double>({m, n}, 1.0 / std::sqrt(static_cast<double>(m)));
    auto H = LinearOperator::dense(A, {1, side, side});
    auto y = H.apply(xs);
    auto res = fista_classical(H, y, 1e-4, 5000);
    EXPECT_LE(l2_norm(res.x - xs) / l2_norm(xs), 1e-2);
}

TEST(Fista, DivergenceRaises) {
    auto H = well_posed(4, 19);
    Rng rng(20);
    auto y = rng.normal_tensor<double>({1, 16});
    FistaOptions opt;
    opt.lipschitz = 1e-3; // step far beyond 2/L
    opt.monotone = false;
    EXPECT_THROW(fista_classical(*H, y, 0.0, 100, opt), NumericFailure);
    EXPECT_THROW(fista_classical(*H, y, -1.0, 10), ContractViolation);
}
