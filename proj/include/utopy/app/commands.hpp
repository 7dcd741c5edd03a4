#pragma once

// Subcommand implementations. Each command reads staged artifacts under an
// output root, writes its own artifacts plus exactly one manifest.json, and
// returns that manifest.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "utopy/app/config.hpp"
#include "utopy/data/dataset.hpp"
#include "utopy/operators/descriptor.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/version.hpp"

namespace utopy::app {

namespace fs = std::filesystem;

/// Directory layout under one output root.
struct Layout {
    fs::path root;

    fs::path operators() const { return root / "operators"; }
    fs::path data() const { return root / "data"; }
    fs::path measurements() const { return root / "measurements"; }
    fs::path runs() const { return root / "runs"; }
    fs::path run(const std::string& label) const { return runs() / label; }
    fs::path verify() const { return root / "verify"; }
    fs::path plots() const { return root / "plots"; }
};

struct Context {
    std::string command;
    ExperimentConfig config;
    fs::path config_path; // empty when no --config was given
    fs::path out;
    std::ostream* progress = &std::cerr; // null silences per-epoch lines
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Seed for a named stage, derived from the experiment seed.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
    return Rng(seed).substream(stage).next_u64();
}

/// Inputs the operators depend on.
inline json operator_setup(const ExperimentConfig& c) {
    const auto j = to_json(c);
    return {{"seed", c.seed}, {"side", c.data.side}, {"operator", j["operator"]}};
}

/// Inputs the measurement cache depends on.
inline json measurement_setup(const ExperimentConfig& c) {
    const auto j = to_json(c);
    return {{"seed", c.seed}, {"snr_db", j["snr_db"]}, {"data", j["data"]}, {"operator", j["operator"]}};
}

inline OperatorPair build_operators(const ExperimentConfig& c) {
    if (c.op.kind == "cs") return make_cs_pair({c.data.side, c.op.ratio, c.op.eta, stage_seed(c.seed, "operators")});
    return make_blur_pair({c.data.side, c.op.sigma, c.op.sigma_t});
}

inline DatasetSplit build_dataset(const ExperimentConfig& c) {
    const auto seed = stage_seed(c.seed, "data");
    if (c.data.source == "directory") return load_dataset(c.data.dir, c.data.side, c.data.train_fraction, seed);
    return split_dataset(synth_dataset(c.data.train_count + c.data.test_count, c.data.side, seed), c.data.train_count);
}

inline json begin_manifest(const Context& ctx) {
    return {{"command", ctx.command},
            {"config_path", ctx.config_path.empty() ? json(nullptr) : json(fs::absolute(ctx.config_path).string())},
            {"config", to_json(ctx.config)},
            {"seed", ctx.config.seed},
            {"label", ctx.config.run_label()},
            {"code_version", code_version()},
            {"output_dir", fs::absolute(ctx.out).string()},
            {"started_at", utc_now()}};
}

inline json finish_manifest(json m, const fs::path& dir, json outputs) {
    m["outputs"] = std::move(outputs);
    m["finished_at"] = utc_now();
    write_json(dir / "manifest.json", m);
    return m;
}

/// Fails with MissingPrerequisite unless `file` exists and its "setup" entry
/// equals `expect`.
inline json require_setup(const fs::path& file, const json& expect, const std::string& stage_cmd) {
    if (!fs::exists(file)) throw MissingPrerequisite(file.string() + " not found; run '" + stage_cmd + "' first");
    const json j = read_json_file(file);
    if (!j.contains("setup") || j["setup"] != expect)
        throw MissingPrerequisite(file.string() + " was staged for a different configuration; rerun '" + stage_cmd + "'");
    return j;
}

inline json cmd_make_operators(const Context& ctx) {
    const auto& c = ctx.config;
    c.validate();
    const Layout L{ctx.out};
    auto m = begin_manifest(ctx);
    auto ops = build_operators(c);
    fs::create_directories(L.operators());
    save_descriptor(L.operators() / "H.json", ops.H);
    save_descriptor(L.operators() / "H_t.json", ops.H_t);
    json dims = {{"kind", c.op.kind}, {"n", ops.H.in_size()}, {"m", ops.H.out_size()}, {"m_t", ops.H_t.out_size()}};
    if (c.op.kind == "cs") {
        dims["ratio"] = c.op.ratio;
        dims["eta"] = c.op.eta;
    } else {
        dims["sigma"] = c.op.sigma;
        dims["sigma_t"] = c.op.sigma_t;
        dims["half_width"] = ops.H.half_width();
        dims["half_width_t"] = ops.H_t.half_width();
    }
    dims["setup"] = operator_setup(c);
    write_json(L.operators() / "dims.json", dims);
    return finish_manifest(std::move(m), L.operators(), {"H.json", "H_t.json", "dims.json"});
}

inline json cmd_simulate(const Context& ctx) {
    const auto& c = ctx.config;
    c.validate();
    const Layout L{ctx.out};
    require_setup(L.operators() / "dims.json", operator_setup(c), "make-operators");
    auto m = begin_manifest(ctx);
    auto H = std::make_shared<const LinearOperator>(load_descriptor(L.operators() / "H.json"));
    auto H_t = std::make_shared<const LinearOperator>(load_descriptor(L.operators() / "H_t.json"));
    const auto split = build_dataset(c);
    UTOPY_REQUIRE(split.train.size() >= 1 && split.test.size() >= 1, "simulate: train and test splits must be non-empty");
    fs::create_directories(L.data());
    const auto data_seed = stage_seed(c.seed, "data");
    save_dataset(L.data() / "train", split.train, data_seed);
    save_dataset(L.data() / "test", split.test, data_seed);

    const auto d = make_train_data(H, H_t, split.train.images, split.test.images, c.snr_db, Rng(c.seed).substream("noise"));
    fs::create_directories(L.measurements());
    json achieved = json::object();
    auto store = [&](const char* name, const LinearOperator& op, const Tensor<float>& x, const Tensor<float>& y) {
        save_tensor(L.measurements() / (std::string(name) + ".utns"), y);
        achieved[name] = detail::snr_json(measured_snr_db(op.apply(x), y));
    };
    store("y_train", *H, d.x_train, d.y_train);
    store("y_t_train", *H_t, d.x_train, d.y_t_train);
    store("y_test", *H, d.x_test, d.y_test);
    store("y_t_test", *H_t, d.x_test, d.y_t_test);
    write_json(L.measurements() / "measurements.json",
               {{"setup", measurement_setup(c)},
                {"train_count", d.train_size()},
                {"test_count", d.test_size()},
                {"m", H->out_size()},
                {"m_t", H_t->out_size()},
                {"snr_db_target", detail::snr_json(c.snr_db)},
                {"snr_db_achieved", achieved},
                {"warnings", split.train.warnings},
                {"skipped_images", split.skipped}});
    return finish_manifest(std::move(m), L.measurements(),
                           {"../data/train.utns", "../data/test.utns", "y_train.utns", "y_t_train.utns", "y_test.utns",
                            "y_t_test.utns", "measurements.json"});
}

/// Staged operators, images and measurements for the configured setup.
inline TrainData load_staged(const ExperimentConfig& c, const Layout& L) {
    require_setup(L.operators() / "dims.json", operator_setup(c), "make-operators");
    require_setup(L.measurements() / "measurements.json", measurement_setup(c), "simulate");
    TrainData d;
    d.H = std::make_shared<const LinearOperator>(load_descriptor(L.operators() / "H.json"));
    d.H_t = std::make_shared<const LinearOperator>(load_descriptor(L.operators() / "H_t.json"));
    d.x_train = load_dataset_cache(L.data() / "train").images;
    d.x_test = load_dataset_cache(L.data() / "test").images;
    auto load = [&](const char* name) {
        const auto p = L.measurements() / (std::string(name) + ".utns");
        if (!fs::exists(p)) throw MissingPrerequisite(p.string() + " not found; run 'simulate' first");
        return load_tensor<float>(p);
    };
    d.y_train = load("y_train");
    d.y_t_train = load("y_t_train");
    d.y_test = load("y_test");
    d.y_t_test = load("y_t_test");
    d.snr_db = c.snr_db;
    d.noise = Rng(c.seed).substream("noise");
    UTOPY_REQUIRE(d.y_train.dim(0) == d.x_train.dim(0) && d.y_test.dim(0) == d.x_test.dim(0),
                  "staged measurements do not match the staged images");
    return d;
}

inline json cmd_train(const Context& ctx) {
    const auto& c = ctx.config;
    c.validate();
    const Layout L{ctx.out};
    auto data = load_staged(c, L);
    auto m = begin_manifest(ctx);
    const fs::path dir = L.run(c.run_label());
    fs::create_directories(dir);
    TrainConfig tc = c.resolved_train();
    tc.checkpoint = dir / "model";
    m["scheduler"] = to_string(tc.scheduler.kind);
    m["baseline"] = tc.scheduler.kind == SchedulerKind::ConstantZero;

    std::function<void(const EpochRecord&)> on_epoch;
    if (ctx.progress)
        on_epoch = [&](const EpochRecord& r) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "[%s] epoch %d/%d alpha=%.4g loss=%.5f train_psnr=%.3f test_psnr=%.3f\n",
                          tc.label.c_str(), r.epoch + 1, tc.scheduler.max_epochs, r.alpha, r.train_loss, r.train_psnr,
                          r.test_psnr);
            *ctx.progress << buf << std::flush;
        };
    auto res = train<float>(tc, init_model<float>(tc), std::move(data), on_epoch);

    write_text(dir / "metrics.csv", res.log.to_csv());
    const auto& last = res.log.records.back();
    write_json(dir / "metrics.json", {{"label", tc.label},
                                      {"scheduler", to_string(tc.scheduler.kind)},
                                      {"epochs", res.log.to_json()},
                                      {"final_test_psnr", last.test_psnr},
                                      {"final_test_ssim", last.test_ssim},
                                      {"backprojection_psnr", res.backprojection_psnr},
                                      {"synthetic_reads", res.synthetic_reads}});
    std::vector<int> epochs;
    for (std::size_t i = 0; i < res.probe.size(); ++i) epochs.push_back(static_cast<int>(i));
    write_text(dir / "monitor.csv", monitor_csv(training_path_monitor(epochs, res.probe_alpha, res.probe)));
    m["final_test_psnr"] = last.test_psnr;
    m["backprojection_psnr"] = res.backprojection_psnr;
    return finish_manifest(std::move(m), dir, {"metrics.csv", "metrics.json", "monitor.csv", "model.utns", "model.json"});
}

/// Evaluation settings: each ratio (cs) or sigma (blur) at each SNR.
inline std::vector<EvalSetting> eval_settings(const ExperimentConfig& c) {
    std::vector<EvalSetting> out;
    const auto op_seed = stage_seed(c.seed, "operators");
    auto snr_tag = [](double s) {
        if (std::isinf(s)) return std::string("inf");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", s);
        return std::string(buf);
    };
    for (double snr : c.eval.snr_db) {
        if (c.op.kind == "cs") {
            for (double r : c.eval.ratios) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "cs-%.2f@%sdB", r, snr_tag(snr).c_str());
                out.push_back({buf, std::make_shared<const LinearOperator>(make_cs_pair({c.data.side, r, 0.0, op_seed}).H),
                               snr, r});
            }
        } else {
            for (double s : c.eval.sigmas) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "blur-%g@%sdB", s, snr_tag(snr).c_str());
                out.push_back({buf, std::make_shared<const LinearOperator>(LinearOperator::gaussian_blur(c.data.side, s)),
                               snr, 0.0});
            }
        }
    }
    return out;
}

inline json cmd_eval(const Context& ctx) {
    const auto& c = ctx.config;
    c.validate();
    const Layout L{ctx.out};
    const fs::path run = L.run(c.run_label());
    if (!fs::exists(run / "model.json"))
        throw MissingPrerequisite("no trained model at " + run.string() + "; run 'train' first");
    const auto test_stem = L.data() / "test";
    auto m = begin_manifest(ctx);
    const auto model = load_model<float>(run / "model");
    const auto x_test = load_dataset_cache(test_stem).images;
    const auto table = evaluate(model, x_test, eval_settings(c), Rng(c.seed).substream("eval"));
    const fs::path dir = run / "eval";
    fs::create_directories(dir);
    write_text(dir / "eval.csv", table.to_csv());
    write_json(dir / "eval.json", table.to_json());
    return finish_manifest(std::move(m), dir, {"eval.csv", "eval.json"});
}

inline json cmd_verify(const Context& ctx) {
    const auto& c = ctx.config;
    c.validate();
    const Layout L{ctx.out};
    auto m = begin_manifest(ctx);
    const auto vc = c.resolved_verify();
    const auto desk = build_desk_theory<double>(vc);
    const auto rep = trace_path(desk.setup, alpha_grid(vc.grid_points));
    fs::create_directories(L.verify());
    write_text(L.verify() / "path.csv", rep.to_csv());
    write_json(L.verify() / "path.json", rep.to_json());
    m["max_ratio"] = rep.max_ratio();
    m["any_violation"] = rep.any_violation();
    m = finish_manifest(std::move(m), L.verify(), {"path.csv", "path.json"});
    if (rep.failed) throw NumericFailure("verify: " + rep.failure);
    return m;
}

namespace detail {

inline std::vector<std::string> csv_lines(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw MissingPrerequisite("cannot read " + p.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(is, line);)
        if (!line.empty()) out.push_back(line);
    return out;
}

} // namespace detail

/// Collects per-run logs into long-format CSVs keyed by run label.
inline json cmd_plot_data(const Context& ctx) {
    const Layout L{ctx.out};
    std::vector<std::string> labels;
    if (fs::is_directory(L.runs()))
        for (const auto& e : fs::directory_iterator(L.runs()))
            if (fs::exists(e.path() / "metrics.csv")) labels.push_back(e.path().filename().string());
    std::sort(labels.begin(), labels.end());
    const bool have_path = fs::exists(L.verify() / "path.csv");
    if (labels.empty() && !have_path)
        throw MissingPrerequisite("nothing to convert under " + ctx.out.string() + "; run 'train' or 'verify' first");
    auto m = begin_manifest(ctx);
    fs::create_directories(L.plots());
    json outputs = json::array();
    if (!labels.empty()) {
        std::string psnr = "label,epoch,train_psnr,test_psnr\n", alpha = "label,epoch,alpha\n";
        std::string mon = "label,epoch,alpha,delta_alpha,delta_x,gap\n";
        char buf[256];
        for (const auto& label : labels) {
            for (const auto& r : read_metrics_csv(L.run(label) / "metrics.csv").records) {
                std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g\n", label.c_str(), r.epoch, r.train_psnr, r.test_psnr);
                psnr += buf;
                std::snprintf(buf, sizeof buf, "%s,%d,%.17g\n", label.c_str(), r.epoch, r.alpha);
                alpha += buf;
            }
            if (fs::exists(L.run(label) / "monitor.csv")) {
                const auto lines = detail::csv_lines(L.run(label) / "monitor.csv");
                for (std::size_t i = 1; i < lines.size(); ++i) mon += label + "," + lines[i] + "\n";
            }
        }
        write_text(L.plots() / "psnr_vs_epoch.csv", psnr);
        write_text(L.plots() / "alpha_vs_epoch.csv", alpha);
        write_text(L.plots() / "monitor.csv", mon);
        outputs.insert(outputs.end(), {"psnr_vs_epoch.csv", "alpha_vs_epoch.csv", "monitor.csv"});
    }
    if (have_path) {
        const auto lines = detail::csv_lines(L.verify() / "path.csv");
        std::string path = "alpha,ratio_to_prev,banach_bound,drift_bound\n";
        for (std::size_t i = 1; i < lines.size(); ++i) {
            std::vector<std::string> f;
            std::stringstream ss(lines[i]);
            for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
            if (f.size() < 6) throw ContractViolation("plot-data: malformed row in path.csv");
            path += f[0] + "," + f[3] + "," + f[4] + "," + f[5] + "\n";
        }
        write_text(L.plots() / "path.csv", path);
        outputs.push_back("path.csv");
    }
    m["runs"] = labels;
    return finish_manifest(std::move(m), L.plots(), outputs);
}

} // namespace utopy::app
