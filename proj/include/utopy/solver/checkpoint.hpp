#pragma once

// Model checkpoint: <stem>.utns holds UnrollModel::parameters() in order,
// followed by (running_mean, running_var) for every batch-norm layer of every
// owned prox; <stem>.json is the manifest needed to rebuild the structure.

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "utopy/core/tensor_io.hpp"
#include "utopy/solver/unrolled.hpp"

namespace utopy {

inline nlohmann::json prox_config_json(const ProxConfig& c) {
    return {{"flavor", to_string(c.flavor)},
            {"channels", c.channels},
            {"side", c.side},
            {"widths", c.widths},
            {"kernel", c.kernel},
            {"activation", to_string(c.activation)},
            {"beta_target", c.beta_target},
            {"residual_fraction", c.residual_fraction},
            {"power_iters", c.power_iters}};
}

inline ProxConfig prox_config_from_json(const nlohmann::json& j) {
    ProxConfig c;
    c.flavor = parse_flavor(j.at("flavor").get<std::string>());
    c.channels = j.at("channels").get<std::size_t>();
    c.side = j.at("side").get<std::size_t>();
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.beta_target = j.at("beta_target").get<double>();
    c.residual_fraction = j.at("residual_fraction").get<double>();
    c.power_iters = j.value("power_iters", 500);
    return c;
}

template <class T>
nlohmann::json model_manifest(const UnrollModel<T>& m) {
    UTOPY_REQUIRE(m.K() >= 1, "checkpoint: empty model");
    nlohmann::json j = prox_config_json(m.stages[0].prox.config);
    std::vector<double> tau, accel;
    for (const auto& s : m.stages) {
        tau.push_back(static_cast<double>(s.tau[0]));
        accel.push_back(static_cast<double>(s.accel[0]));
    }
    j["K"] = m.K();
    j["tau"] = tau;
    j["t"] = accel;
    j["shared_prox"] = m.shared_prox;
    j["dtype"] = dtype_of<T>() == DType::F32 ? "f32" : "f64";
    j["parameter_count"] = m.parameter_count();
    j["names"] = m.stages[0].prox.names;
    return j;
}

template <class T>
void save_model(const std::filesystem::path& stem, const UnrollModel<T>& m) {
    std::vector<Tensor<T>> all;
    for (const auto* p : m.parameters()) all.push_back(*p);
    for (std::size_t k = 0; k < m.K(); ++k) {
        if (m.shared_prox && k > 0) continue;
        for (const auto& st : m.stages[k].prox.bn) {
            all.push_back(st.running_mean);
            all.push_back(st.running_var);
        }
    }
    auto bundle = stem;
    bundle += ".utns";
    save_bundle(bundle, all);
    auto manifest = stem;
    manifest += ".json";
    std::ofstream os(manifest);
    if (!os) throw MissingPrerequisite("cannot write " + manifest.string());
    os << model_manifest(m).dump(2) << '\n';
}

template <class T>
UnrollModel<T> load_model(const std::filesystem::path& stem) {
    auto manifest = stem;
    manifest += ".json";
    std::ifstream is(manifest);
    if (!is) throw MissingPrerequisite("model manifest not found: " + manifest.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("model manifest: " + std::string(e.what()));
    }
    auto bundle = stem;
    bundle += ".utns";
    auto tensors = load_bundle<T>(bundle);

    const ProxConfig cfg = prox_config_from_json(j);
    UnrollInit init;
    init.K = j.at("K").get<std::size_t>();
    init.shared_prox = j.value("shared_prox", false);
    Rng rng(0);
    // The skeleton's values are all overwritten below.
    auto skeleton_cfg = cfg;
    skeleton_cfg.power_iters = 1;
    UnrollModel<T> m = make_unroll_model<T>(skeleton_cfg, init, rng);
    auto params = m.parameters();
    std::size_t i = 0;
    auto next = [&](const Shape& expect, const char* what) {
        UTOPY_REQUIRE(i < tensors.size(), std::string("checkpoint: bundle too short at ") + what);
        UTOPY_REQUIRE(tensors[i].shape() == expect, std::string("checkpoint: shape mismatch for ") + what + ": " +
                                                         shape_str(tensors[i].shape()) + " vs " + shape_str(expect));
        return std::move(tensors[i++]);
    };
    for (auto* p : params) *p = next(p->shape(), "parameter");
    for (std::size_t k = 0; k < m.K(); ++k) {
        m.stages[k].prox.config = cfg;
        if (m.shared_prox && k > 0) continue;
        for (auto& st : m.stages[k].prox.bn) {
            st.running_mean = next(st.running_mean.shape(), "running_mean");
            st.running_var = next(st.running_var.shape(), "running_var");
        }
    }
    UTOPY_REQUIRE(i == tensors.size(), "checkpoint: bundle has extra tensors");
    return m;
}

} // namespace utopy
