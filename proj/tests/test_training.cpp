#include <gtest/gtest.h>

#include <algorithm>
#include <complex>
#include <filesystem>

#include "utopy/core/gradcheck.hpp"
#include "utopy/data/dataset.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/training/train.hpp"

using namespace utopy;
using Td = Tensor<double>;

namespace {

SchedulerSpec spec(SchedulerKind k, int max_epochs, int freq = 10) {
    SchedulerSpec s;
    s.kind = k;
    s.max_epochs = max_epochs;
    s.freq = freq;
    s.fraction = 0.7;
    return s;
}

struct Problem {
    TrainData data;
    TrainConfig cfg;
};

Problem small_problem(SchedulerKind kind, int epochs, std::uint64_t seed = 0, std::size_t n_train = 32) {
    const std::size_t side = 16;
    auto ops = make_cs_pair({side, 0.3, 0.2, 1});
    auto all = synth_dataset(n_train + 8, side, 100 + seed);
    Problem p;
    p.data = make_train_data(std::make_shared<const LinearOperator>(ops.H), std::make_shared<const LinearOperator>(ops.H_t),
                             slice_batch(all.images, 0, n_train), slice_batch(all.images, n_train, n_train + 8), 35.0,
                             Rng(seed).substream("noise"));
    p.cfg.scheduler = spec(kind, epochs, 2);
    p.cfg.batch_size = 8;
    p.cfg.lr = 3e-3;
    p.cfg.seed = seed;
    p.cfg.K = 2;
    p.cfg.prox = ProxConfig::unet({4, 8}, side);
    p.cfg.probe_count = 2;
    return p;
}

// Magnitude of the unitary DFT of one real plane by direct summation.
std::vector<double> dft_abs(const double* x, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w);
    const double two_pi = 2 * std::acos(-1.0);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc = 0;
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    acc += x[i * w + j] * std::polar(1.0, -two_pi * (double(u * i) / double(h) + double(v * j) / double(w)));
            out[u * w + v] = std::abs(acc) / std::sqrt(double(h * w));
        }
    return out;
}

} // namespace

TEST(Scheduler, StartsAtOne) {
    for (auto k : {SchedulerKind::Exponential, SchedulerKind::Linear}) {
        EXPECT_EQ(scheduler_alpha(spec(k, 500), 0), 1.0);
        EXPECT_EQ(scheduler_value(spec(k, 500), 0.0), 1.0);
    }
    EXPECT_EQ(scheduler_alpha(spec(SchedulerKind::ConstantZero, 500), 0), 0.0);
}

TEST(Scheduler, LinearMidpoint) {
    EXPECT_NEAR(scheduler_value(spec(SchedulerKind::Linear, 500), 175.0), 0.5, 1e-12);
    EXPECT_NEAR(scheduler_value(spec(SchedulerKind::Linear, 200), 70.0), 0.5, 1e-12);
    // 70 is an update epoch for freq 10, so the held value agrees.
    EXPECT_NEAR(scheduler_alpha(spec(SchedulerKind::Linear, 200), 70), 0.5, 1e-12);
    // 175 is not: the held value is the one from epoch 170.
    EXPECT_NEAR(scheduler_alpha(spec(SchedulerKind::Linear, 500), 175), 1.0 - 170.0 / 350.0, 1e-15);
}

TEST(Scheduler, ExponentialEndOfRamp) {
    for (int m : {200, 500}) {
        const auto s = spec(SchedulerKind::Exponential, m);
        EXPECT_NEAR(scheduler_value(s, 0.7 * m), 1e-8, 1e-20);
        EXPECT_NEAR(s.epsilon(), std::log(1e8) / (0.7 * m), 1e-15);
        EXPECT_EQ(scheduler_alpha(s, static_cast<int>(0.7 * m)), 0.0);
    }
}

TEST(Scheduler, InvariantsOverAllEpochs) {
    for (auto k : {SchedulerKind::Exponential, SchedulerKind::Linear, SchedulerKind::ConstantZero})
        for (int m : {200, 500, 37})
            for (int f : {1, 6, 10}) {
                const auto s = spec(k, m, f);
                double prev = 1.0;
                for (int l = 0; l <= m; ++l) {
                    const double a = scheduler_alpha(s, l);
                    ASSERT_GE(a, 0.0);
                    ASSERT_LE(a, 1.0);
                    ASSERT_LE(a, prev);
                    if (l >= 0.7 * m) ASSERT_LE(a, 1e-8);
                    if (l > 0 && l % f != 0 && l < 0.7 * m) ASSERT_EQ(a, prev) << "l=" << l;
                    prev = a;
                }
            }
}

TEST(Scheduler, RejectsInvalidSpecs) {
    auto s = spec(SchedulerKind::Linear, 100);
    EXPECT_THROW(scheduler_alpha(s, 101), ContractViolation);
    EXPECT_THROW(scheduler_alpha(s, -1), ContractViolation);
    s.freq = 0;
    EXPECT_THROW(scheduler_alpha(s, 1), ContractViolation);
    s = spec(SchedulerKind::Linear, 100);
    s.fraction = 0.0;
    EXPECT_THROW(scheduler_alpha(s, 1), ContractViolation);
    EXPECT_THROW(parse_scheduler("cosine"), ContractViolation);
    EXPECT_EQ(parse_scheduler("baseline"), SchedulerKind::ConstantZero);
}

TEST(Adam, ZeroGradientKeepsParameters) {
    AdamState<double> st;
    Td p({3}, 0.7);
    adam_update(st, {&p}, {Td({3})}, 0.1);
    EXPECT_TRUE(p == Td({3}, 0.7));
    // Moments decay geometrically under zero gradient.
    adam_update(st, {&p}, {Td({3}, 1.0)}, 0.1);
    const double m1 = st.m[0][0], v1 = st.v[0][0];
    adam_update(st, {&p}, {Td({3})}, 0.1);
    EXPECT_DOUBLE_EQ(st.m[0][0], 0.9 * m1);
    EXPECT_DOUBLE_EQ(st.v[0][0], 0.999 * v1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    AdamState<double> st;
    Td p({1}, 0.0);
    adam_update(st, {&p}, {Td({1}, 1.0)}, 1e-3);
    EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, ReferenceTrace) {
    const double expect[10] = {0.4900000001188395,  0.47998731516691023, 0.4715737823210235, 0.4687019895630391,
                               0.4696740823746508,  0.4713277680721547,  0.4709141469305878, 0.46828438774104886,
                               0.46506200362497024, 0.4634542710500308};
    AdamState<double> st;
    Td p({1}, 0.5);
    for (int k = 1; k <= 10; ++k) {
        adam_update(st, {&p}, {Td({1}, std::sin(double(k)))}, 0.01);
        EXPECT_NEAR(p[0], expect[k - 1], 1e-10) << "step " << k;
    }
}

TEST(Loss, VanishesOnEqualInputs) {
    Rng rng(1);
    auto a = rng.uniform_tensor<double>({3, 1, 16, 16});
    EXPECT_NEAR(composite_loss_value(a, a), 0.0, 1e-6);
    EXPECT_GE(composite_loss_value(a, a), 0.0);
}

TEST(Loss, ConstantImagesClosedForm) {
    Td a({2, 1, 16, 16}, 0.0), b({2, 1, 16, 16}, 1.0);
    const double c1 = 1e-4;
    EXPECT_NEAR(composite_loss_value(a, b), 0.8 + 0.2 * (1.0 - c1 / (1.0 + c1)), 1e-9);
    LossWeights only_freq{0.0, 0.0, 0.02, 0.25};
    EXPECT_NEAR(composite_loss_value(a, b, only_freq), 0.0, 1e-12);
}

TEST(Loss, HighPassMaskRadii) {
    auto m = highpass_mask<double>(16, 16, 0.25);
    EXPECT_EQ(m[0], 0.0);
    EXPECT_EQ(m[1], 0.0); // radius 1/8 of Nyquist
    EXPECT_EQ(m[2], 1.0); // radius 1/4
    EXPECT_EQ(m[8 * 16 + 8], 1.0);
    EXPECT_EQ(m[15], 0.0); // wraps to -1
}

TEST(Loss, FrequencyTermMatchesDirectDft) {
    Rng rng(2);
    auto a = rng.uniform_tensor<double>({2, 1, 8, 8});
    auto b = rng.uniform_tensor<double>({2, 1, 8, 8});
    LossWeights only_freq{0.0, 0.0, 1.0, 0.25};
    const auto mask = highpass_mask<double>(8, 8, 0.25);
    double expect = 0;
    for (std::size_t s = 0; s < 2; ++s) {
        std::vector<double> d(64);
        for (std::size_t i = 0; i < 64; ++i) d[i] = a[s * 64 + i] - b[s * 64 + i];
        auto f = dft_abs(d.data(), 8, 8);
        double e = 0;
        for (std::size_t i = 0; i < 64; ++i) e += mask[i] * f[i] * mask[i] * f[i];
        expect += std::sqrt(e) / 2;
    }
    EXPECT_NEAR(composite_loss_value(a, b, only_freq), expect, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(s, 3);
        auto a = rng.uniform_tensor<double>({2, 1, 12, 12}, 0.1, 0.9);
        auto b = rng.uniform_tensor<double>({2, 1, 12, 12}, 0.1, 0.9);
        ScalarGraph<double> f = [&](Tape<double>& t, std::span<const Var<double>> ps) {
            return composite_loss(ps[0], t.constant(b));
        };
        EXPECT_LE(finite_diff_check<double>(f, {a}, 1e-6).max_rel_error, 1e-4) << "seed " << s;
    }
}

TEST(Loss, ShapeMismatchRejected) {
    EXPECT_THROW(composite_loss_value(Td({1, 1, 16, 16}), Td({1, 1, 16, 8})), ContractViolation);
}

TEST(Train, ZeroLearningRateKeepsModel) {
    auto p = small_problem(SchedulerKind::Linear, 1, 0, 8);
    p.cfg.lr = 0.0;
    auto m0 = init_model<float>(p.cfg);
    auto r = train(p.cfg, m0, p.data);
    ASSERT_EQ(r.log.records.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.log.records[0].train_loss));
    EXPECT_GT(r.log.records[0].train_loss, 0.0);
    auto a = m0.parameters();
    auto b = r.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i] == *b[i]);
}

TEST(Train, BaselineIsDeterministicAndNeverReadsSynthetic) {
    auto p = small_problem(SchedulerKind::ConstantZero, 3);
    auto r1 = train(p.cfg, init_model<float>(p.cfg), p.data);
    auto r2 = train(p.cfg, init_model<float>(p.cfg), p.data);
    EXPECT_EQ(r1.log.to_csv(), r2.log.to_csv());
    EXPECT_EQ(r1.synthetic_reads, 0u);
    for (const auto& rec : r1.log.records) {
        EXPECT_EQ(rec.alpha, 0.0);
        EXPECT_EQ(rec.seconds, 0.0);
    }
}

TEST(Train, ContinuationReadsSyntheticWhileAlphaPositive) {
    auto p = small_problem(SchedulerKind::Linear, 4);
    auto r = train(p.cfg, init_model<float>(p.cfg), p.data);
    EXPECT_GT(r.synthetic_reads, 0u);
    ASSERT_EQ(r.log.records.size(), 4u);
    EXPECT_EQ(r.log.records[0].alpha, 1.0);
    EXPECT_EQ(r.log.records[1].alpha, 1.0);
    EXPECT_NEAR(r.log.records[2].alpha, 1.0 - 2.0 / 2.8, 1e-12);
    EXPECT_EQ(r.log.records[3].alpha, 0.0); // past the end of the ramp at 2.8
    EXPECT_EQ(r.probe.size(), 4u);
    EXPECT_GT(r.backprojection_psnr, 0.0);
}

TEST(Train, WorkersAgreeWithSingleThreadClosely) {
    auto p = small_problem(SchedulerKind::Linear, 2);
    auto r1 = train(p.cfg, init_model<float>(p.cfg), p.data);
    p.cfg.workers = 2;
    auto r2 = train(p.cfg, init_model<float>(p.cfg), p.data);
    auto r3 = train(p.cfg, init_model<float>(p.cfg), p.data);
    EXPECT_EQ(r2.log.to_csv(), r3.log.to_csv());
    for (std::size_t e = 0; e < 2; ++e) EXPECT_TRUE(std::isfinite(r2.log.records[e].train_loss));
    // Batch-norm statistics differ per worker chunk, so agreement is approximate.
    EXPECT_NEAR(r1.log.records[0].test_psnr, r2.log.records[0].test_psnr, 3.0);
}

TEST(Train, LearningRateHalvings) {
    TrainConfig c;
    c.scheduler.max_epochs = 100;
    c.lr = 1.0;
    EXPECT_EQ(c.halving_epochs(), (std::vector<int>{40, 60, 80}));
    EXPECT_EQ(c.lr_at(39), 1.0);
    EXPECT_EQ(c.lr_at(40), 0.5);
    EXPECT_EQ(c.lr_at(79), 0.25);
    EXPECT_EQ(c.lr_at(99), 0.125);
}

TEST(Train, NumericFailureNamesEpochAndBatchAndCheckpoints) {
    auto p = small_problem(SchedulerKind::ConstantZero, 1, 0, 8);
    p.cfg.tau_init = 1e38;
    const auto dir = std::filesystem::temp_directory_path() / "utopy_train_fail";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    p.cfg.checkpoint = dir / "model";
    try {
        train(p.cfg, init_model<float>(p.cfg), p.data);
        FAIL() << "expected NumericFailure";
    } catch (const NumericFailure& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 0 batch 0"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "model.utns"));
}

TEST(Train, CheckpointMatchesReturnedModel) {
    auto p = small_problem(SchedulerKind::Exponential, 2);
    const auto dir = std::filesystem::temp_directory_path() / "utopy_train_ckpt";
    std::filesystem::create_directories(dir);
    p.cfg.checkpoint = dir / "model";
    auto r = train(p.cfg, init_model<float>(p.cfg), p.data);
    auto back = load_model<float>(dir / "model");
    EXPECT_TRUE(infer(back, p.data.H, p.data.y_test) == infer(r.model, p.data.H, p.data.y_test));
}

TEST(Train, LossDecreasesOverTenEpochs) {
    std::vector<double> drops;
    for (std::uint64_t s : {0u, 1u, 2u}) {
        auto p = small_problem(SchedulerKind::ConstantZero, 10, s, 64);
        auto r = train(p.cfg, init_model<float>(p.cfg), p.data);
        drops.push_back(r.log.records.front().train_loss - r.log.records.back().train_loss);
    }
    std::sort(drops.begin(), drops.end());
    EXPECT_GT(drops[1], 0.0);
}

TEST(Metrics, CsvRoundTrip) {
    MetricsLog log;
    log.append({0, 1.0, 0.5, 20.0, 21.0, 0.7, 0.0});
    log.append({1, 0.5, 0.25, 22.0, 23.0, 0.8, 0.0});
    EXPECT_THROW(log.append({5, 0, 0, 0, 0, 0, 0}), ContractViolation);
    const auto path = std::filesystem::temp_directory_path() / "utopy_metrics.csv";
    std::ofstream(path) << log.to_csv();
    auto back = read_metrics_csv(path);
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_EQ(back.to_csv(), log.to_csv());
    EXPECT_EQ(log.to_csv().substr(0, log.to_csv().find('\n')), "epoch,alpha,train_loss,train_psnr,test_psnr,test_ssim,seconds");
}

TEST(Evaluate, DeterministicTable) {
    auto p = small_problem(SchedulerKind::ConstantZero, 1, 0, 8);
    auto r = train(p.cfg, init_model<float>(p.cfg), p.data);
    std::vector<EvalSetting> settings;
    for (double ratio : {0.25, 0.30, 0.35})
        settings.push_back({"cs", std::make_shared<const LinearOperator>(make_cs_pair({16, ratio, 0.0, 1}).H), 35.0, ratio});
    auto t1 = evaluate(r.model, p.data.x_test, settings, Rng(5));
    auto t2 = evaluate(r.model, p.data.x_test, settings, Rng(5));
    EXPECT_EQ(t1.rows.size(), 3u);
    EXPECT_EQ(t1.to_csv(), t2.to_csv());
    std::vector<EvalSetting> bad{{"wrong", std::make_shared<const LinearOperator>(make_cs_pair({8, 0.3, 0.0, 1}).H), 35.0, 0.3}};
    EXPECT_THROW(evaluate(r.model, p.data.x_test, bad, Rng(5)), ContractViolation);
}
