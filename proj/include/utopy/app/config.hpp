#pragma once

// Experiment configuration: one JSON document drives every subcommand.
// Parsing is strict: unknown keys and wrong types are config errors.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "utopy/theory/harness.hpp"
#include "utopy/training/train.hpp"

namespace utopy::app {

using nlohmann::json;

struct DataConfig {
    std::string source = "synthetic"; // "synthetic" or "directory"
    std::filesystem::path dir;        // directory source only
    std::size_t train_count = 2000;   // synthetic only
    std::size_t test_count = 200;     // synthetic only
    std::size_t side = 32;
    double train_fraction = 0.9; // directory only
};

struct OperatorConfig {
    std::string kind = "cs"; // "cs" or "blur"
    double ratio = 0.3;
    double eta = 0.1;
    double sigma = 5.0;
    double sigma_t = 3.0;
};

/// Evaluation grid: every ratio (cs) or sigma (blur) crossed with every SNR.
struct EvalConfig {
    std::vector<double> ratios{0.25, 0.30, 0.35};
    std::vector<double> sigmas{5.0};
    std::vector<double> snr_db{35.0};
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string label; // empty: the scheduler name
    double snr_db = 35.0;
    DataConfig data;
    OperatorConfig op;
    TrainConfig train;
    EvalConfig eval;
    DeskTheoryConfig verify;

    std::string run_label() const { return label.empty() ? to_string(train.scheduler.kind) : label; }

    /// Copies the shared fields into the training config.
    TrainConfig resolved_train() const {
        TrainConfig t = train;
        t.seed = seed;
        t.workers = workers;
        t.snr_db = snr_db;
        t.label = run_label();
        t.prox.side = data.side;
        return t;
    }

    /// Harness setup under the experiment seed; eta = 0 shares one operator and one measurement.
    DeskTheoryConfig resolved_verify() const {
        DeskTheoryConfig v = verify;
        v.seed = seed;
        v.synthetic_equals_target = v.eta == 0.0;
        return v;
    }

    void validate() const {
        UTOPY_REQUIRE(data.source == "synthetic" || data.source == "directory",
                      "config: data.source must be 'synthetic' or 'directory'");
        if (data.source == "synthetic")
            UTOPY_REQUIRE(data.train_count >= 1 && data.test_count >= 1, "config: data counts must be >= 1");
        else
            UTOPY_REQUIRE(!data.dir.empty(), "config: data.dir is required for a directory source");
        UTOPY_REQUIRE(data.side >= 4 && (data.side & (data.side - 1)) == 0, "config: data.side must be a power of two >= 4");
        UTOPY_REQUIRE(data.train_fraction > 0.0 && data.train_fraction < 1.0, "config: data.train_fraction must lie in (0, 1)");
        UTOPY_REQUIRE(op.kind == "cs" || op.kind == "blur", "config: operator.kind must be 'cs' or 'blur'");
        UTOPY_REQUIRE(!std::isnan(snr_db) && snr_db > -std::numeric_limits<double>::infinity(), "config: snr_db must be a number or \"inf\"");
        UTOPY_REQUIRE(workers >= 1, "config: workers must be >= 1");
        for (char c : run_label())
            UTOPY_REQUIRE(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.',
                          "config: label may only contain letters, digits, '-', '_' and '.'");
        UTOPY_REQUIRE(run_label() != "." && run_label() != "..", "config: label must name a directory");
        for (double s : eval.snr_db) UTOPY_REQUIRE(!std::isnan(s), "config: eval.snr_db entries must be numbers or \"inf\"");
        if (op.kind == "cs") UTOPY_REQUIRE(!eval.ratios.empty(), "config: eval.ratios must not be empty");
        else UTOPY_REQUIRE(!eval.sigmas.empty(), "config: eval.sigmas must not be empty");
        UTOPY_REQUIRE(!eval.snr_db.empty(), "config: eval.snr_db must not be empty");
        UTOPY_REQUIRE(verify.grid_points >= 2, "config: verify.grid_points must be >= 2");
        UTOPY_REQUIRE(verify.tau_scale > 0.0, "config: verify.tau_scale must be > 0");
        resolved_train().validate();
    }
};

/// Small synthetic compressed-sensing run that fits a desktop CPU.
inline ExperimentConfig desk_preset() {
    ExperimentConfig c;
    c.data = {"synthetic", {}, 2000, 200, 32, 0.9};
    c.op = {"cs", 0.3, 0.1, 5.0, 3.0};
    c.snr_db = 35.0;
    c.train.scheduler.kind = SchedulerKind::Linear;
    c.train.scheduler.max_epochs = 60;
    c.train.scheduler.freq = 10;
    c.train.batch_size = 32;
    c.train.K = 3;
    c.train.prox = ProxConfig::unet({8, 16}, 32);
    return c;
}

/// Full-size defaults: 64 x 64 images, K = 5, four UNet levels, 500 epochs.
inline ExperimentConfig default_config() {
    ExperimentConfig c;
    c.data = {"synthetic", {}, 24318, 2993, 64, 0.9};
    c.train.scheduler.max_epochs = 500;
    c.train.K = 5;
    c.train.lr = 1e-5;
    c.train.tau_init = 1e-3;
    c.train.prox = ProxConfig::unet({32, 64, 128, 256}, 64);
    return c;
}

namespace detail {

inline json snr_json(double v) { return std::isinf(v) && v > 0 ? json("inf") : json(v); }

inline double snr_from_json(const json& j, const std::string& where) {
    if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    if (!j.is_number()) throw ContractViolation(where + ": expected a number or \"inf\"");
    return j.get<double>();
}

/// Reads present keys of one JSON object and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ContractViolation(where_ + ": expected an object");
    }

    template <class V>
    void read(const char* key, V& out) {
        const json* v = find(key);
        if (!v) return;
        const auto where = at(key);
        if constexpr (std::is_same_v<V, bool>) {
            if (!v->is_boolean()) throw ContractViolation(where + ": expected a boolean");
        } else if constexpr (std::is_integral_v<V> && std::is_unsigned_v<V>) {
            if (!v->is_number_unsigned()) throw ContractViolation(where + ": expected a non-negative integer");
        } else if constexpr (std::is_integral_v<V>) {
            if (!v->is_number_integer()) throw ContractViolation(where + ": expected an integer");
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!v->is_number()) throw ContractViolation(where + ": expected a number");
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!v->is_string()) throw ContractViolation(where + ": expected a string");
        }
        try {
            out = v->get<V>();
        } catch (const json::exception& e) {
            throw ContractViolation(where + ": " + e.what());
        }
    }

    void read_path(const char* key, std::filesystem::path& out) {
        std::string s = out.string();
        read(key, s);
        out = s;
    }

    void read_snr(const char* key, double& out) {
        if (const json* v = find(key)) out = snr_from_json(*v, at(key));
    }

    const json* find(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string at(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ContractViolation(where_ + ": unknown key '" + item.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline json to_json(const SchedulerSpec& s) {
    return {{"kind", to_string(s.kind)}, {"freq", s.freq}, {"max_epochs", s.max_epochs}, {"fraction", s.fraction},
            {"floor", s.floor_value}};
}

inline void merge(SchedulerSpec& s, const json& j, const std::string& where) {
    detail::ObjectReader r(j, where);
    std::string kind = to_string(s.kind);
    r.read("kind", kind);
    try {
        s.kind = parse_scheduler(kind);
    } catch (const std::exception& e) {
        throw ContractViolation(r.at("kind") + ": " + e.what());
    }
    r.read("freq", s.freq);
    r.read("max_epochs", s.max_epochs);
    r.read("fraction", s.fraction);
    r.read("floor", s.floor_value);
    r.finish();
}

inline json to_json(const ProxConfig& p) { return prox_config_json(p); }

inline void merge(ProxConfig& p, const json& j, const std::string& where) {
    detail::ObjectReader r(j, where);
    std::string flavor = to_string(p.flavor), act = to_string(p.activation);
    r.read("flavor", flavor);
    r.read("activation", act);
    try {
        p.flavor = parse_flavor(flavor);
        p.activation = parse_activation(act);
    } catch (const std::exception& e) {
        throw ContractViolation(where + ": " + e.what());
    }
    r.read("channels", p.channels);
    r.read("side", p.side);
    r.read("widths", p.widths);
    r.read("kernel", p.kernel);
    r.read("beta_target", p.beta_target);
    r.read("residual_fraction", p.residual_fraction);
    r.read("power_iters", p.power_iters);
    r.finish();
}

inline json to_json(const TrainConfig& t) {
    return {{"scheduler", to_json(t.scheduler)},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"lr_halving", t.halving_epochs()},
            {"K", t.K},
            {"prox", to_json(t.prox)},
            {"tau_init", t.tau_init},
            {"accel_init", t.accel_init},
            {"shared_prox", t.shared_prox},
            {"loss", {{"l1", t.loss.l1}, {"ssim", t.loss.ssim}, {"freq", t.loss.freq}, {"inner_radius", t.loss.inner_radius}}},
            {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
            {"redraw_noise", t.redraw_noise},
            {"record_wall_time", t.record_wall_time},
            {"probe_count", t.probe_count}};
}

inline void merge(TrainConfig& t, const json& j, const std::string& where) {
    detail::ObjectReader r(j, where);
    if (const json* s = r.find("scheduler")) merge(t.scheduler, *s, r.at("scheduler"));
    if (const json* p = r.find("prox")) merge(t.prox, *p, r.at("prox"));
    if (const json* l = r.find("loss")) {
        detail::ObjectReader lr(*l, r.at("loss"));
        lr.read("l1", t.loss.l1);
        lr.read("ssim", t.loss.ssim);
        lr.read("freq", t.loss.freq);
        lr.read("inner_radius", t.loss.inner_radius);
        lr.finish();
    }
    if (const json* a = r.find("adam")) {
        detail::ObjectReader ar(*a, r.at("adam"));
        ar.read("beta1", t.adam.beta1);
        ar.read("beta2", t.adam.beta2);
        ar.read("eps", t.adam.eps);
        ar.finish();
    }
    r.read("batch_size", t.batch_size);
    r.read("lr", t.lr);
    r.read("lr_halving", t.lr_halving);
    r.read("K", t.K);
    r.read("tau_init", t.tau_init);
    r.read("accel_init", t.accel_init);
    r.read("shared_prox", t.shared_prox);
    r.read("redraw_noise", t.redraw_noise);
    r.read("record_wall_time", t.record_wall_time);
    r.read("probe_count", t.probe_count);
    r.finish();
}

inline json to_json(const DeskTheoryConfig& v) {
    return {{"side", v.side},
            {"ratio", v.ratio},
            {"eta", v.eta},
            {"beta_target", v.beta_target},
            {"widths", v.widths},
            {"tau_scale", v.tau_scale},
            {"snr_db", detail::snr_json(v.snr_db)},
            {"batch", v.batch},
            {"grid_points", v.grid_points},
            {"tol", v.tol}};
}

inline void merge(DeskTheoryConfig& v, const json& j, const std::string& where) {
    detail::ObjectReader r(j, where);
    r.read("side", v.side);
    r.read("ratio", v.ratio);
    r.read("eta", v.eta);
    r.read("beta_target", v.beta_target);
    r.read("widths", v.widths);
    r.read("tau_scale", v.tau_scale);
    r.read_snr("snr_db", v.snr_db);
    r.read("batch", v.batch);
    r.read("grid_points", v.grid_points);
    r.read("tol", v.tol);
    r.finish();
}

/// Fully resolved snapshot; merging it onto any base reproduces the config.
inline json to_json(const ExperimentConfig& c) {
    json eval_snr = json::array();
    for (double s : c.eval.snr_db) eval_snr.push_back(detail::snr_json(s));
    return {{"seed", c.seed},
            {"workers", c.workers},
            {"label", c.label},
            {"snr_db", detail::snr_json(c.snr_db)},
            {"data",
             {{"source", c.data.source},
              {"dir", c.data.dir.string()},
              {"train_count", c.data.train_count},
              {"test_count", c.data.test_count},
              {"side", c.data.side},
              {"train_fraction", c.data.train_fraction}}},
            {"operator",
             {{"kind", c.op.kind}, {"ratio", c.op.ratio}, {"eta", c.op.eta}, {"sigma", c.op.sigma}, {"sigma_t", c.op.sigma_t}}},
            {"train", to_json(c.train)},
            {"eval", {{"ratios", c.eval.ratios}, {"sigmas", c.eval.sigmas}, {"snr_db", eval_snr}}},
            {"verify", to_json(c.verify)}};
}

/// Overlays the keys present in `j` onto `c`.
inline void merge(ExperimentConfig& c, const json& j) {
    detail::ObjectReader r(j, "config");
    r.read("seed", c.seed);
    r.read("workers", c.workers);
    r.read("label", c.label);
    r.read_snr("snr_db", c.snr_db);
    if (const json* d = r.find("data")) {
        detail::ObjectReader dr(*d, r.at("data"));
        dr.read("source", c.data.source);
        dr.read_path("dir", c.data.dir);
        dr.read("train_count", c.data.train_count);
        dr.read("test_count", c.data.test_count);
        dr.read("side", c.data.side);
        dr.read("train_fraction", c.data.train_fraction);
        dr.finish();
    }
    if (const json* o = r.find("operator")) {
        detail::ObjectReader orr(*o, r.at("operator"));
        orr.read("kind", c.op.kind);
        orr.read("ratio", c.op.ratio);
        orr.read("eta", c.op.eta);
        orr.read("sigma", c.op.sigma);
        orr.read("sigma_t", c.op.sigma_t);
        orr.finish();
    }
    if (const json* t = r.find("train")) {
        merge(c.train, *t, r.at("train"));
        if (t->contains("prox") && (*t)["prox"].contains("side"))
            UTOPY_REQUIRE(c.train.prox.side == c.data.side, "config: train.prox.side must equal data.side");
    }
    if (const json* e = r.find("eval")) {
        detail::ObjectReader er(*e, r.at("eval"));
        er.read("ratios", c.eval.ratios);
        er.read("sigmas", c.eval.sigmas);
        if (const json* s = er.find("snr_db")) {
            if (!s->is_array()) throw ContractViolation(er.at("snr_db") + ": expected an array");
            c.eval.snr_db.clear();
            for (const auto& v : *s) c.eval.snr_db.push_back(detail::snr_from_json(v, er.at("snr_db")));
        }
        er.finish();
    }
    if (const json* v = r.find("verify")) merge(c.verify, *v, r.at("verify"));
    r.finish();
    c.train.prox.side = c.data.side;
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisite("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ContractViolation(path.string() + ": " + e.what());
    }
}

} // namespace utopy::app
