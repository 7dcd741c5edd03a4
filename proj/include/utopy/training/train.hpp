#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include "json.hpp"
#include "utopy/data/noise.hpp"
#include "utopy/solver/checkpoint.hpp"
#include "utopy/training/adam.hpp"
#include "utopy/training/loss.hpp"
#include "utopy/training/scheduler.hpp"

namespace utopy {

struct TrainConfig {
    SchedulerSpec scheduler;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::vector<int> lr_halving; // empty: 40%, 60% and 80% of max_epochs
    std::uint64_t seed = 0;
    std::size_t K = 3;
    ProxConfig prox = ProxConfig::unet({8, 16}, 32);
    double tau_init = 1.0;
    double accel_init = 0.0;
    bool shared_prox = false;
    LossWeights loss;
    AdamConfig adam;
    bool redraw_noise = false; // fresh measurement noise every epoch
    double snr_db = 35.0;
    std::size_t workers = 1;
    bool record_wall_time = false;
    std::size_t probe_count = 4;     // test images logged for the path monitor
    std::filesystem::path checkpoint; // stem; empty disables checkpoints
    std::string label = "run";

    std::vector<int> halving_epochs() const {
        if (!lr_halving.empty()) return lr_halving;
        const double m = scheduler.max_epochs;
        return {static_cast<int>(std::lround(0.4 * m)), static_cast<int>(std::lround(0.6 * m)),
                static_cast<int>(std::lround(0.8 * m))};
    }

    double lr_at(int epoch) const {
        double r = lr;
        for (int e : halving_epochs())
            if (epoch >= e) r *= 0.5;
        return r;
    }

    void validate() const {
        scheduler.validate();
        loss.validate();
        prox.validate();
        UTOPY_REQUIRE(batch_size >= 1, "train: batch size must be >= 1");
        UTOPY_REQUIRE(lr >= 0.0 && std::isfinite(lr), "train: learning rate must be finite and >= 0");
        UTOPY_REQUIRE(K >= 1, "train: K must be >= 1");
        UTOPY_REQUIRE(workers >= 1, "train: workers must be >= 1");
        UTOPY_REQUIRE(std::isfinite(tau_init) && std::isfinite(accel_init), "train: tau/t init must be finite");
    }
};

/// Clean images plus fixed noisy measurements for the target (H, y) and
/// synthetic (H_t, y_t) problems.
struct TrainData {
    std::shared_ptr<const LinearOperator> H, H_t;
    Tensor<float> x_train, y_train, y_t_train;
    Tensor<float> x_test, y_test, y_t_test;
    double snr_db = 35.0;
    Rng noise{0};

    std::size_t train_size() const { return x_train.dim(0); }
    std::size_t test_size() const { return x_test.dim(0); }
};

/// Simulates all measurements. Noise streams: "train", "train_t", "test",
/// "test_t" under `noise`, one split per sample.
inline TrainData make_train_data(std::shared_ptr<const LinearOperator> H, std::shared_ptr<const LinearOperator> H_t,
                                 const Tensor<float>& x_train, const Tensor<float>& x_test, double snr_db,
                                 const Rng& noise) {
    UTOPY_REQUIRE(H != nullptr, "train data: target operator required");
    UTOPY_REQUIRE(x_train.rank() == 4 && x_train.dim(0) >= 1, "train data: training set is empty");
    UTOPY_REQUIRE(x_test.rank() == 4 && x_test.dim(0) >= 1, "train data: test set is empty");
    TrainData d;
    d.H = std::move(H);
    d.H_t = std::move(H_t);
    d.x_train = x_train;
    d.x_test = x_test;
    d.snr_db = snr_db;
    d.noise = noise;
    d.y_train = simulate_measurements(*d.H, x_train, snr_db, noise.substream("train"));
    d.y_test = simulate_measurements(*d.H, x_test, snr_db, noise.substream("test"));
    if (d.H_t) {
        d.y_t_train = simulate_measurements(*d.H_t, x_train, snr_db, noise.substream("train_t"));
        d.y_t_test = simulate_measurements(*d.H_t, x_test, snr_db, noise.substream("test_t"));
    }
    return d;
}

struct EpochRecord {
    int epoch = 0;
    double alpha = 0, train_loss = 0, train_psnr = 0, test_psnr = 0, test_ssim = 0, seconds = 0;
};

struct MetricsLog {
    std::vector<EpochRecord> records;

    static constexpr const char* kHeader = "epoch,alpha,train_loss,train_psnr,test_psnr,test_ssim,seconds";

    void append(const EpochRecord& r) {
        UTOPY_REQUIRE(records.empty() || r.epoch == records.back().epoch + 1, "metrics: epochs must be consecutive");
        records.push_back(r);
    }

    std::string to_csv() const {
        std::string s = std::string(kHeader) + "\n";
        char buf[256];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.epoch, r.alpha, r.train_loss,
                          r.train_psnr, r.test_psnr, r.test_ssim, r.seconds);
            s += buf;
        }
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : records)
            j.push_back({{"epoch", r.epoch},
                         {"alpha", r.alpha},
                         {"train_loss", r.train_loss},
                         {"train_psnr", r.train_psnr},
                         {"test_psnr", r.test_psnr},
                         {"test_ssim", r.test_ssim},
                         {"seconds", r.seconds}});
        return j;
    }
};

inline MetricsLog read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisite("metrics file not found: " + path.string());
    std::string line;
    std::getline(is, line);
    UTOPY_REQUIRE(line == MetricsLog::kHeader, "metrics: unexpected header in " + path.string());
    MetricsLog log;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        UTOPY_REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.alpha, &r.train_loss,
                                  &r.train_psnr, &r.test_psnr, &r.test_ssim, &r.seconds) == 7,
                      "metrics: malformed row '" + line + "'");
        log.records.push_back(r);
    }
    return log;
}

template <class T>
struct TrainResult {
    UnrollModel<T> model;
    MetricsLog log;
    std::vector<Tensor<T>> probe; // per epoch: reconstruction of the probe images at that epoch's alpha
    std::vector<double> probe_alpha;
    std::size_t synthetic_reads = 0;
    double backprojection_psnr = 0; // adjoint H^T y on the test set
};

template <class T>
struct TestScore {
    double psnr = 0, ssim = 0;
};

/// Mean per-image PSNR / SSIM of alpha = 0 inference on a test set.
template <class T>
TestScore<T> score(const UnrollModel<T>& model, std::shared_ptr<const LinearOperator> H, const Tensor<float>& x,
                   const Tensor<float>& y, std::size_t chunk = 50) {
    TestScore<T> s;
    const std::size_t n = x.dim(0);
    for (std::size_t b = 0; b < n; b += chunk) {
        const std::size_t e = std::min(n, b + chunk);
        const Tensor<T> xb = slice_batch(x, b, e).template cast<T>();
        const Tensor<T> out = infer(model, H, slice_batch(y, b, e).template cast<T>());
        for (std::size_t i = 0; i < e - b; ++i) {
            const auto oi = slice_batch(out, i, i + 1), xi = slice_batch(xb, i, i + 1);
            s.psnr += psnr(oi, xi);
            s.ssim += ssim(oi, xi);
        }
    }
    s.psnr /= static_cast<double>(n);
    s.ssim /= static_cast<double>(n);
    return s;
}

inline double backprojection_psnr(const LinearOperator& H, const Tensor<float>& x, const Tensor<float>& y) {
    return mean_psnr(H.adjoint(y), x);
}

namespace detail {

template <class T>
struct BatchOutcome {
    std::vector<Tensor<T>> grads; // aligned with UnrollModel::parameters()
    double loss = 0;
    double psnr_sum = 0;
};

/// Loss and gradients on one chunk. `model` BN statistics are updated.
template <class T>
BatchOutcome<T> run_chunk(UnrollModel<T>& model, const TrainData& data, std::span<const std::size_t> idx, double alpha,
                          const LossWeights& lw, const HomotopyFidelity<T>* counter_source) {
    const Tensor<T> x = gather_batch(data.x_train, idx).template cast<T>();
    const Tensor<T> y = gather_batch(data.y_train, idx).template cast<T>();
    std::optional<HomotopyFidelity<T>> fid;
    if (alpha > 0.0) {
        UTOPY_REQUIRE(data.H_t != nullptr, "train: alpha > 0 needs a synthetic operator");
        fid.emplace(data.H, y, data.H_t, gather_batch(data.y_t_train, idx).template cast<T>());
    } else {
        fid.emplace(data.H, y);
    }
    if (counter_source) fid->share_counter(*counter_source);
    Tape<T> tape;
    auto bound = bind(tape, model, true);
    auto out = unroll_forward(tape, model, bound, *fid, alpha, true).output;
    auto loss = composite_loss(out, tape.constant(x), lw);
    BatchOutcome<T> r;
    r.loss = static_cast<double>(loss.value().item());
    for (std::size_t i = 0; i < idx.size(); ++i)
        r.psnr_sum += psnr(slice_batch(out.value(), i, i + 1), slice_batch(x, i, i + 1));
    auto grads = tape.backward(loss);
    for (const auto& v : bound.all) {
        auto it = grads.find(v.id());
        r.grads.push_back(it == grads.end() ? Tensor<T>(v.shape()) : std::move(it->second));
    }
    return r;
}

} // namespace detail

/// Runs the continuation training loop. Deterministic for a fixed config,
/// including worker count.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, UnrollModel<T> model, TrainData data,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    UTOPY_REQUIRE(model.K() >= 1, "train: empty model");
    UTOPY_REQUIRE(data.train_size() >= 1 && data.test_size() >= 1, "train: dataset is empty");
    const bool uses_synthetic = cfg.scheduler.kind != SchedulerKind::ConstantZero;
    if (uses_synthetic)
        UTOPY_REQUIRE(data.H_t != nullptr && data.y_t_train.numel() > 0, "train: scheduler needs synthetic measurements");

    TrainResult<T> res;
    HomotopyFidelity<T> counter(data.H, Tensor<T>({1, data.H->out_size()}));
    const Rng root(cfg.seed);
    const Rng shuffle_rng = root.substream("shuffle");
    AdamState<T> adam;
    res.backprojection_psnr = backprojection_psnr(*data.H, data.x_test, data.y_test);
    const std::size_t n_probe = std::min(cfg.probe_count, data.test_size());
    const Tensor<float> probe_x = slice_batch(data.x_test, 0, n_probe);

    const std::size_t N = data.train_size();
    const std::size_t B = std::min(cfg.batch_size, N);
    for (int epoch = 0; epoch < cfg.scheduler.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double alpha = scheduler_alpha(cfg.scheduler, epoch);
        const double lr = cfg.lr_at(epoch);
        if (cfg.redraw_noise && epoch > 0) {
            const Rng r = data.noise.substream("epoch").split(static_cast<std::uint64_t>(epoch));
            data.y_train = simulate_measurements(*data.H, data.x_train, data.snr_db, r.substream("train"));
            if (uses_synthetic)
                data.y_t_train = simulate_measurements(*data.H_t, data.x_train, data.snr_db, r.substream("train_t"));
        }
        Rng sr = shuffle_rng.split(static_cast<std::uint64_t>(epoch));
        const auto order = sr.permutation(N);
        double loss_sum = 0, psnr_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < N; start += B, ++batches) {
            const std::size_t end = std::min(N, start + B), n = end - start;
            std::span<const std::size_t> idx(order.data() + start, n);
            try {
                detail::BatchOutcome<T> total;
                const std::size_t W = std::min(cfg.workers, n);
                if (W == 1) {
                    total = detail::run_chunk(model, data, idx, alpha, cfg.loss, &counter);
                } else {
                    // Worker w takes a contiguous slice; only worker 0 updates BN statistics.
                    std::vector<detail::BatchOutcome<T>> parts(W);
                    std::vector<UnrollModel<T>> replicas(W - 1, model);
                    std::vector<std::exception_ptr> errors(W);
                    std::vector<std::thread> threads;
                    for (std::size_t w = 0; w < W; ++w) {
                        const std::size_t a = w * n / W, b = (w + 1) * n / W;
                        threads.emplace_back([&, w, a, b] {
                            try {
                                auto& m = w == 0 ? model : replicas[w - 1];
                                parts[w] = detail::run_chunk(m, data, idx.subspan(a, b - a), alpha, cfg.loss, &counter);
                            } catch (...) {
                                errors[w] = std::current_exception();
                            }
                        });
                    }
                    for (auto& t : threads) t.join();
                    for (auto& e : errors)
                        if (e) std::rethrow_exception(e);
                    total.grads.resize(parts[0].grads.size());
                    for (std::size_t w = 0; w < W; ++w) {
                        const double share = static_cast<double>((w + 1) * n / W - w * n / W) / static_cast<double>(n);
                        total.loss += share * parts[w].loss;
                        total.psnr_sum += parts[w].psnr_sum;
                        for (std::size_t i = 0; i < total.grads.size(); ++i) {
                            if (w == 0) total.grads[i] = Tensor<T>(parts[0].grads[i].shape());
                            axpy(total.grads[i], static_cast<T>(share), parts[w].grads[i]);
                        }
                    }
                }
                if (!std::isfinite(total.loss)) throw NumericFailure("non-finite loss");
                for (const auto& g : total.grads)
                    if (!g.all_finite()) throw NumericFailure("non-finite gradient");
                adam_update(adam, model.parameters(), total.grads, lr, cfg.adam);
                for (const auto* p : model.parameters())
                    if (!p->all_finite()) throw NumericFailure("non-finite parameter after update");
                loss_sum += total.loss;
                psnr_sum += total.psnr_sum;
            } catch (const NumericFailure& e) {
                if (!cfg.checkpoint.empty()) save_model(cfg.checkpoint, model);
                throw NumericFailure("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": " +
                                     e.what());
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.alpha = alpha;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        rec.train_psnr = psnr_sum / static_cast<double>(N);
        const auto sc = score(model, data.H, data.x_test, data.y_test);
        rec.test_psnr = sc.psnr;
        rec.test_ssim = sc.ssim;
        if (n_probe > 0) {
            const Tensor<T> py = slice_batch(data.y_test, 0, n_probe).template cast<T>();
            if (alpha > 0.0) {
                HomotopyFidelity<T> pf(data.H, py, data.H_t, slice_batch(data.y_t_test, 0, n_probe).template cast<T>());
                pf.share_counter(counter);
                res.probe.push_back(reconstruct(model, pf, alpha));
            } else {
                res.probe.push_back(infer(model, data.H, py));
            }
            res.probe_alpha.push_back(alpha);
        }
        if (cfg.record_wall_time)
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.append(rec);
        if (on_epoch) on_epoch(rec);
        if (!cfg.checkpoint.empty() && (epoch + 1) % cfg.scheduler.freq == 0) save_model(cfg.checkpoint, model);
    }
    if (!cfg.checkpoint.empty()) save_model(cfg.checkpoint, model);
    res.synthetic_reads = counter.synthetic_reads();
    res.model = std::move(model);
    return res;
}

/// Builds a fresh model for a config, seeded from the "model" substream.
template <class T>
UnrollModel<T> init_model(const TrainConfig& cfg) {
    Rng rng = Rng(cfg.seed).substream("model");
    return make_unroll_model<T>(cfg.prox, {cfg.K, cfg.tau_init, cfg.accel_init, cfg.shared_prox}, rng);
}

/// One evaluation setting: an operator and the measurement SNR.
struct EvalSetting {
    std::string label;
    std::shared_ptr<const LinearOperator> H;
    double snr_db = 35.0;
    double ratio = 0.0; // m / n when the operator is a CS design
};

struct EvalRow {
    std::string label;
    double ratio = 0, snr_db = 0, psnr = 0, ssim = 0, backprojection_psnr = 0;
};

struct EvalTable {
    std::vector<EvalRow> rows;

    std::string to_csv() const {
        std::string s = "setting,ratio,snr_db,psnr,ssim,backprojection_psnr\n";
        char buf[320];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%.17g,%.17g,%.17g\n", r.label.c_str(), r.ratio, r.snr_db, r.psnr,
                          r.ssim, r.backprojection_psnr);
            s += buf;
        }
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows)
            j.push_back({{"setting", r.label},
                         {"ratio", r.ratio},
                         {"snr_db", r.snr_db},
                         {"psnr", r.psnr},
                         {"ssim", r.ssim},
                         {"backprojection_psnr", r.backprojection_psnr}});
        return j;
    }
};

/// Per-setting mean PSNR / SSIM of alpha = 0 inference. Noise for setting i
/// comes from noise.split(i).
template <class T>
EvalTable evaluate(const UnrollModel<T>& model, const Tensor<float>& x_test, const std::vector<EvalSetting>& settings,
                   const Rng& noise) {
    UTOPY_REQUIRE(model.K() >= 1, "evaluate: empty model");
    EvalTable table;
    for (std::size_t i = 0; i < settings.size(); ++i) {
        const auto& s = settings[i];
        UTOPY_REQUIRE(s.H != nullptr, "evaluate: setting '" + s.label + "' has no operator");
        Shape img{1};
        img.insert(img.end(), s.H->in_shape().begin(), s.H->in_shape().end());
        const auto& pc = model.prox(0).config;
        UTOPY_REQUIRE(img == Shape({1, pc.channels, pc.side, pc.side}),
                      "evaluate: operator input " + shape_str(s.H->in_shape()) + " does not match the model image size");
        UTOPY_REQUIRE(x_test.rank() == 4 && x_test.per_sample() == s.H->in_size(),
                      "evaluate: test images do not match operator input");
        const auto y = simulate_measurements(*s.H, x_test, s.snr_db, noise.split(i));
        const auto sc = score(model, s.H, x_test, y);
        table.rows.push_back({s.label, s.ratio, s.snr_db, sc.psnr, sc.ssim, backprojection_psnr(*s.H, x_test, y)});
    }
    return table;
}

} // namespace utopy
