#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <sstream>

#include "utopy/core/power_iteration.hpp"
#include "utopy/core/rng.hpp"
#include "utopy/core/tensor.hpp"
#include "utopy/core/tensor_io.hpp"
#include "utopy/operators/designs.hpp"

using namespace utopy;

TEST(Tensor, ShapeDataInvariant) {
    EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ContractViolation);
    Tensor<double> t({2, 3}, 1.5);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.per_sample(), 3u);
    EXPECT_THROW(t.reshaped({4}), ContractViolation);
    EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, BatchHelpers) {
    Tensor<float> t({4, 2}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7});
    std::vector<std::size_t> idx{3, 0};
    auto g = gather_batch(t, std::span<const std::size_t>(idx));
    EXPECT_EQ(g.storage(), (std::vector<float>{6, 7, 0, 1}));
    auto s = slice_batch(t, 1, 3);
    EXPECT_EQ(s.storage(), (std::vector<float>{2, 3, 4, 5}));
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    auto ta = a.normal_tensor<double>({64});
    auto tb = b.normal_tensor<double>({64});
    EXPECT_TRUE(ta == tb);
    Rng c(43);
    EXPECT_FALSE(ta == c.normal_tensor<double>({64}));
}

TEST(Rng, SubstreamsIndependentOfDrawOrder) {
    Rng root(7);
    Rng x = root.substream("noise");
    (void)root.substream("init").next_u64();
    Rng y = Rng(7).substream("noise");
    for (int i = 0; i < 16; ++i) EXPECT_EQ(x.next_u64(), y.next_u64());
    EXPECT_NE(Rng(7).substream("noise").next_u64(), Rng(7).substream("init").next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
    Rng r(1);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(r.below(7), 7u);
    }
}

TEST(Rng, PermutationIsBijection) {
    Rng r(3);
    auto p = r.permutation(100);
    std::vector<int> seen(100, 0);
    for (auto v : p) seen.at(v)++;
    for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(TensorIo, RoundTripBitwise) {
    Rng r(5);
    auto a = r.normal_tensor<float>({3, 1, 4, 4});
    auto b = r.normal_tensor<double>({7});
    std::stringstream ss;
    write_tensor(ss, a);
    write_tensor(ss, b);
    EXPECT_TRUE(read_tensor<float>(ss) == a);
    EXPECT_TRUE(read_tensor<double>(ss) == b);
}

TEST(TensorIo, HeaderLayout) {
    Tensor<float> t({2}, std::vector<float>{1.0f, -2.0f});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string s = ss.str();
    ASSERT_EQ(s.size(), 4u + 2 + 2 + 4 + 1 + 8);
    EXPECT_EQ(s.substr(0, 4), "UTNS");
    EXPECT_EQ(static_cast<unsigned char>(s[4]), 1);  // version
    EXPECT_EQ(static_cast<unsigned char>(s[6]), 1);  // rank
    EXPECT_EQ(static_cast<unsigned char>(s[8]), 2);  // dim 0
    EXPECT_EQ(static_cast<unsigned char>(s[12]), 0); // f32
    // 1.0f = 0x3F800000 little-endian
    EXPECT_EQ(static_cast<unsigned char>(s[16]), 0x3F);
    EXPECT_EQ(static_cast<unsigned char>(s[15]), 0x80);
}

TEST(TensorIo, DtypeConversionAndBundle) {
    const auto dir = std::filesystem::temp_directory_path() / "utopy_io_test";
    std::filesystem::create_directories(dir);
    std::vector<Tensor<double>> ts{Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4}), Tensor<double>::scalar(0.25)};
    save_bundle(dir / "b.utns", ts);
    auto back = load_bundle<float>(dir / "b.utns");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].storage(), (std::vector<float>{1, 2, 3, 4}));
    EXPECT_EQ(back[1].item(), 0.25f);
    EXPECT_THROW(load_tensor<float>(dir / "missing.utns"), MissingPrerequisite);
    std::stringstream bad("UTNX");
    EXPECT_THROW(read_tensor<float>(bad), ContractViolation);
}

TEST(PowerIteration, Identity) {
    Rng rng(0);
    auto id = [](const Tensor<double>& v) { return v; };
    auto est = power_iteration<double>(id, id, {16}, 100, 1e-12, rng);
    EXPECT_NEAR(est.sigma, 1.0, 1e-6);
    EXPECT_TRUE(est.converged);
}

TEST(PowerIteration, Diagonal) {
    Rng rng(1);
    const std::vector<double> d{3, 1, 0.5};
    auto diag = [&](const Tensor<double>& v) {
        Tensor<double> o(v.shape());
        for (std::size_t i = 0; i < 3; ++i) o[i] = d[i] * v[i];
        return o;
    };
    auto est = power_iteration<double>(diag, diag, {3}, 500, 1e-14, rng);
    EXPECT_NEAR(est.sigma, 3.0, 1e-6);
}

TEST(PowerIteration, ZeroOperatorFlag) {
    Rng rng(2);
    auto zero = [](const Tensor<double>& v) { return Tensor<double>(v.shape()); };
    auto est = power_iteration<double>(zero, zero, {5}, 10, 1e-6, rng);
    EXPECT_EQ(est.sigma, 0.0);
    EXPECT_TRUE(est.zero_operator);
}

TEST(PowerIteration, NonConvergenceFlag) {
    Rng rng(3);
    const std::vector<double> d{1.0, 0.999999};
    auto diag = [&](const Tensor<double>& v) {
        Tensor<double> o(v.shape());
        for (std::size_t i = 0; i < 2; ++i) o[i] = d[i] * v[i];
        return o;
    };
    auto est = power_iteration<double>(diag, diag, {2}, 1, 1e-15, rng);
    EXPECT_FALSE(est.converged);
    EXPECT_EQ(est.iterations, 1);
}

TEST(PowerIteration, SubsampledHadamardNormalMatchesDenseSvd) {
    auto pair = make_cs_pair({8, 0.3, 0.0, 11});
    const auto& H = pair.H;
    const std::size_t n = 64;
    // Oracle: dense H^T H, singular values by SVD.
    Eigen::MatrixXd A(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Tensor<double> e({1, 1, 8, 8});
        e[j] = 1.0;
        auto c = H.normal(e);
        for (std::size_t i = 0; i < n; ++i) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[i];
    }
    const double svd_top = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
    EXPECT_NEAR(svd_top, 1.0, 1e-12);
    Rng rng(4);
    auto normal = [&](const Tensor<double>& v) { return H.normal(v); };
    auto est = power_iteration<double>(normal, normal, {1, 1, 8, 8}, 200, 1e-12, rng);
    EXPECT_NEAR(est.sigma, svd_top, 1e-5);
}
