#include <gtest/gtest.h>

#include <cmath>

#include "utopy/core/gradcheck.hpp"
#include "utopy/core/power_iteration.hpp"
#include "utopy/operators/descriptor.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/operators/fidelity.hpp"

using namespace utopy;
using Td = Tensor<double>;

namespace {

// Sylvester recursion: H_1 = [1], H_2k = [[H, H], [H, -H]], scaled by 1/sqrt(n).
std::vector<double> sylvester(std::size_t n) {
    std::vector<double> h{1.0};
    for (std::size_t k = 1; k < n; k <<= 1) {
        std::vector<double> g(4 * k * k);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double v = h[i * k + j];
                g[i * 2 * k + j] = v;
                g[i * 2 * k + j + k] = v;
                g[(i + k) * 2 * k + j] = v;
                g[(i + k) * 2 * k + j + k] = -v;
            }
        h = std::move(g);
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& v : h) v *= s;
    return h;
}

// Materialized 2-D zero-padded Gaussian convolution matrix.
std::vector<double> dense_blur(std::size_t side, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k1(2 * r + 1);
    double s = 0;
    for (int a = -r; a <= r; ++a) s += k1[a + r] = std::exp(-a * a / (2 * sigma * sigma));
    for (auto& v : k1) v /= s;
    const int S = static_cast<int>(side);
    std::vector<double> M(side * side * side * side, 0.0);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b) {
                    const int si = i - a, sj = j - b;
                    if (si < 0 || si >= S || sj < 0 || sj >= S) continue;
                    M[(i * S + j) * side * side + si * S + sj] += k1[a + r] * k1[b + r];
                }
    return M;
}

template <class T>
double adjoint_gap(const LinearOperator& op, Rng& rng) {
    Shape xs{1};
    xs.insert(xs.end(), op.in_shape().begin(), op.in_shape().end());
    Shape us{1};
    us.insert(us.end(), op.out_shape().begin(), op.out_shape().end());
    auto x = rng.normal_tensor<T>(xs);
    auto u = rng.normal_tensor<T>(us);
    auto Hx = op.apply(x);
    auto Htu = op.adjoint(u);
    return std::abs(dot(Hx, u) - dot(x, Htu)) / (l2_norm(Hx) * l2_norm(u));
}

HomotopyFidelity<double> random_fidelity(Rng& rng, double eta = 0.25) {
    auto pair = make_cs_pair({4, 0.25, eta, 3});
    auto H = std::make_shared<const LinearOperator>(pair.H);
    auto Ht = std::make_shared<const LinearOperator>(pair.H_t);
    return HomotopyFidelity<double>(H, rng.normal_tensor<double>({2, H->out_size()}), Ht,
                                    rng.normal_tensor<double>({2, Ht->out_size()}));
}

} // namespace

TEST(Fwht, SmallExamples) {
    Td a({2}, std::vector<double>{1, 0});
    auto fa = fwht(a);
    EXPECT_NEAR(fa[0], 1 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(fa[1], 1 / std::sqrt(2.0), 1e-15);
    auto fb = fwht(Td({4}, 1.0));
    EXPECT_NEAR(fb[0], 2.0, 1e-15);
    for (int i = 1; i < 4; ++i) EXPECT_NEAR(fb[i], 0.0, 1e-15);
    EXPECT_THROW(fwht(Td({6}, 1.0)), ContractViolation);
}

TEST(Fwht, MatchesSylvesterOracle) {
    Rng rng(1);
    for (std::size_t n : {4u, 16u, 64u}) {
        auto H = sylvester(n);
        auto x = rng.normal_tensor<double>({n});
        auto y = fwht(x);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += H[i * n + j] * x[j];
            EXPECT_NEAR(y[i], s, 1e-6);
        }
    }
}

TEST(Fwht, InvolutionAndIsometry) {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        auto x = rng.normal_tensor<double>({256});
        auto y = fwht(x);
        EXPECT_NEAR(l2_norm(y), l2_norm(x), 1e-6);
        EXPECT_LE(max_abs_diff(fwht(y), x), 1e-12);
    }
}

TEST(CsDesign, ZeroAugmentationCollapses) {
    auto p = make_cs_pair({4, 0.25, 0.0, 9});
    EXPECT_EQ(p.H.rows().size(), 4u);
    EXPECT_EQ(p.H.rows(), p.H_t.rows());
    EXPECT_EQ(p.H.rows()[0], 0u);
}

TEST(CsDesign, AugmentedRowsArePrefixSuperset) {
    auto p = make_cs_pair({4, 0.25, 0.25, 9});
    ASSERT_EQ(p.H_t.rows().size(), 8u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.H_t.rows()[i], p.H.rows()[i]);
}

TEST(CsDesign, FullScaleRowCount) {
    CsDesign d{64, 0.3, 0.0, 0};
    EXPECT_EQ(d.m(), 1229u);
    EXPECT_EQ(make_cs_pair(d).H.out_size(), 1229u);
}

TEST(CsDesign, Deterministic) {
    EXPECT_EQ(make_cs_pair({8, 0.3, 0.1, 5}).H_t.rows(), make_cs_pair({8, 0.3, 0.1, 5}).H_t.rows());
    EXPECT_NE(make_cs_pair({8, 0.3, 0.1, 5}).H_t.rows(), make_cs_pair({8, 0.3, 0.1, 6}).H_t.rows());
}

TEST(CsDesign, InvalidParameters) {
    EXPECT_THROW(make_cs_pair({4, 0.25, -0.1, 0}), ContractViolation);
    EXPECT_THROW(make_cs_pair({4, 0.9, 0.5, 0}), ContractViolation);
    EXPECT_THROW(make_cs_pair({6, 0.25, 0.0, 0}), ContractViolation);
    EXPECT_THROW(LinearOperator::hadamard_cs(4, {1, 1}), ContractViolation);
    EXPECT_THROW(LinearOperator::hadamard_cs(4, {16}), ContractViolation);
}

TEST(Blur, TinySigmaIsIdentity) {
    auto op = LinearOperator::gaussian_blur(8, 0.05);
    Rng rng(3);
    auto x = rng.normal_tensor<double>({1, 1, 8, 8});
    EXPECT_TRUE(op.apply(x) == x);
}

TEST(Blur, ConstantInteriorPreservedBorderAttenuated) {
    auto op = LinearOperator::gaussian_blur(16, 1.0);
    auto y = op.apply(Td({1, 1, 16, 16}, 1.0));
    EXPECT_NEAR(y[8 * 16 + 8], 1.0, 1e-12);
    EXPECT_LT(y[0], 0.9);
}

TEST(Blur, MatchesDenseToeplitzOracle) {
    const double sigma = 1.0;
    auto op = LinearOperator::gaussian_blur(8, sigma);
    auto M = dense_blur(8, sigma);
    Rng rng(4);
    auto x = rng.normal_tensor<double>({1, 1, 8, 8});
    auto u = rng.normal_tensor<double>({1, 1, 8, 8});
    auto y = op.apply(x);
    auto z = op.adjoint(u);
    for (std::size_t i = 0; i < 64; ++i) {
        double s = 0, t = 0;
        for (std::size_t j = 0; j < 64; ++j) {
            s += M[i * 64 + j] * x[j];
            t += M[j * 64 + i] * u[j];
        }
        EXPECT_NEAR(y[i], s, 1e-6);
        EXPECT_NEAR(z[i], t, 1e-6);
    }
}

TEST(Blur, HalfWidthRule) {
    EXPECT_EQ(LinearOperator::gaussian_blur(64, 5.0).half_width(), 15u);
    EXPECT_EQ(LinearOperator::gaussian_blur(64, 3.0).half_width(), 9u);
    EXPECT_THROW(LinearOperator::gaussian_blur(8, 2.0), ContractViolation);
    EXPECT_THROW(make_blur_pair({32, 3.0, 3.0}), ContractViolation);
    const auto op = LinearOperator::gaussian_blur(64, 5.0);
    double s = 0;
    for (double k : op.kernel()) s += k;
    EXPECT_NEAR(s, 1.0, 1e-14);
}

TEST(Adjoint, AllKindsTwoHundredProbes) {
    Rng rng(5);
    auto cs = make_cs_pair({16, 0.3, 0.1, 1});
    auto blur = make_blur_pair({32, 2.0, 1.0});
    Rng mr(6);
    auto dense = LinearOperator::dense(mr.normal_tensor<double>({7, 12}));
    for (const LinearOperator* op : {&cs.H, &cs.H_t, &blur.H, &blur.H_t, &dense}) {
        for (int p = 0; p < 200; ++p) {
            EXPECT_LE(adjoint_gap<double>(*op, rng), 1e-5);
            EXPECT_LE(adjoint_gap<float>(*op, rng), 1e-5);
        }
    }
}

TEST(Fidelity, SupersetMakesDifferencePsd) {
    auto p = make_cs_pair({8, 0.3, 0.2, 2});
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        auto x = rng.normal_tensor<double>({1, 1, 8, 8});
        EXPECT_GE(dot(x, p.H_t.normal(x)) - dot(x, p.H.normal(x)), -1e-12);
    }
}

TEST(Fidelity, ObjectiveEndpointsAndCombination) {
    Rng rng(8);
    auto fid = random_fidelity(rng);
    auto x = rng.normal_tensor<double>(fid.image_shape());
    const double g0 = objective(fid, x, 0.0), g1 = objective(fid, x, 1.0);
    Tensor<double> r = fid.target().apply(x) - fid.y();
    EXPECT_NEAR(g0, 0.5 * dot(r, r), 1e-12);
    EXPECT_NEAR(objective(fid, x, 0.5), 0.5 * g0 + 0.5 * g1, 1e-12);
    EXPECT_THROW(objective(fid, x, 1.5), ContractViolation);
    EXPECT_THROW(objective(fid, Td({2, 1, 4, 3}), 0.0), ContractViolation);
}

TEST(Fidelity, ConsistentNoiselessPointIsStationary) {
    Rng rng(9);
    auto p = make_cs_pair({4, 0.5, 0.25, 1});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    auto xs = rng.normal_tensor<double>({3, 1, 4, 4});
    HomotopyFidelity<double> fid(H, H->apply(xs), Ht, Ht->apply(xs));
    for (double a : {0.0, 0.3, 1.0}) {
        EXPECT_NEAR(objective(fid, xs, a), 0.0, 1e-24);
        EXPECT_LE(l2_norm(grad_fidelity(fid, xs, a)), 1e-12);
    }
}

TEST(Fidelity, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(static_cast<std::uint64_t>(100 + seed));
        auto fid = random_fidelity(rng);
        const double alpha = rng.uniform();
        // Node whose value is the objective and whose backward is grad_fidelity.
        ScalarGraph<double> f = [&](Tape<double>& t, std::span<const Var<double>> p) {
            const int ix = p[0].id();
            return t.record("g_alpha", Td::scalar(objective(fid, p[0].value(), alpha)), {p[0]},
                            [&fid, ix, alpha](Tape<double>& tp, int self) {
                                tp.accumulate(ix, tp.grad(self)[0] * grad_fidelity(fid, tp.value(ix), alpha));
                            });
        };
        auto r = finite_diff_check<double>(f, {rng.normal_tensor<double>(fid.image_shape())}, 1e-5);
        EXPECT_LE(r.max_rel_error, 1e-6) << "seed " << seed;
    }
}

TEST(Fidelity, GradientIsAffineInAlpha) {
    Rng rng(10);
    auto fid = random_fidelity(rng);
    auto x = rng.normal_tensor<double>(fid.image_shape());
    auto g0 = grad_fidelity(fid, x, 0.0), g1 = grad_fidelity(fid, x, 1.0);
    for (double a : {0.1, 0.37, 0.5, 0.9}) {
        auto ga = grad_fidelity(fid, x, a);
        Td comb = a * g1 + (1 - a) * g0;
        EXPECT_LE(max_abs_diff(ga, comb), 1e-14 * (1 + l2_norm(ga)));
    }
}

TEST(Fidelity, AdjointInitBlends) {
    Rng rng(11);
    auto fid = random_fidelity(rng);
    EXPECT_TRUE(adjoint_init(fid, 0.0) == fid.target().adjoint(fid.y()));
    EXPECT_TRUE(adjoint_init(fid, 1.0) == fid.synthetic().adjoint(fid.y_t()));
    auto H = fid.target_ptr();
    HomotopyFidelity<double> same(H, fid.y(), H, fid.y());
    EXPECT_LE(max_abs_diff(adjoint_init(same, 0.5), H->adjoint(fid.y())), 1e-15);
}

TEST(Fidelity, LipschitzOfCsGradientIsOne) {
    auto p = make_cs_pair({8, 0.3, 0.1, 4});
    auto H = std::make_shared<const LinearOperator>(p.H);
    auto Ht = std::make_shared<const LinearOperator>(p.H_t);
    HomotopyFidelity<double> fid(H, Td({1, H->out_size()}), Ht, Td({1, Ht->out_size()}));
    Rng rng(12);
    for (double a : {0.0, 1.0}) {
        auto hess = [&](const Td& v) { return fidelity_hessian_apply(fid, v, a); };
        auto est = power_iteration<double>(hess, hess, {1, 1, 8, 8}, 500, 1e-12, rng);
        EXPECT_NEAR(est.sigma, 1.0, 1e-6);
    }
}

TEST(Fidelity, TargetOnlyNeverTouchesSynthetic) {
    Rng rng(13);
    auto fid = random_fidelity(rng);
    auto x = rng.normal_tensor<double>(fid.image_shape());
    (void)objective(fid, x, 0.0);
    (void)grad_fidelity(fid, x, 0.0);
    (void)adjoint_init(fid, 0.0);
    EXPECT_EQ(fid.synthetic_reads(), 0u);
    (void)grad_fidelity(fid, x, 0.5);
    EXPECT_GT(fid.synthetic_reads(), 0u);
    HomotopyFidelity<double> target_only(fid.target_ptr(), fid.y());
    EXPECT_THROW(grad_fidelity(target_only, x, 0.5), ContractViolation);
}

TEST(Descriptor, RoundTrip) {
    auto p = make_cs_pair({8, 0.3, 0.1, 4});
    auto back = from_descriptor(to_descriptor(p.H_t));
    EXPECT_EQ(back.rows(), p.H_t.rows());
    EXPECT_EQ(back.kind(), OperatorKind::HadamardCs);
    auto j = to_descriptor(LinearOperator::gaussian_blur(64, 5.0));
    EXPECT_EQ(j["half_width"], 15);
    EXPECT_EQ(from_descriptor(j).sigma(), 5.0);
    nlohmann::json bad = {{"kind", "fourier"}};
    EXPECT_THROW(from_descriptor(bad), ContractViolation);
    EXPECT_THROW(load_descriptor("/nonexistent/H.json"), MissingPrerequisite);
}
