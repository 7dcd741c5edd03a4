#pragma once

// Operator descriptor files: {kind, n, m, rows | sigma, seed} as JSON text.

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "utopy/operators/linear_operator.hpp"

namespace utopy {

inline nlohmann::json to_descriptor(const LinearOperator& op) {
    nlohmann::json j;
    j["kind"] = to_string(op.kind());
    j["n"] = op.in_size();
    j["m"] = op.out_size();
    switch (op.kind()) {
    case OperatorKind::HadamardCs:
        j["side"] = op.side();
        j["rows"] = op.rows();
        j["seed"] = op.seed();
        break;
    case OperatorKind::GaussianBlur:
        j["side"] = op.side();
        j["sigma"] = op.sigma();
        j["half_width"] = op.half_width();
        j["seed"] = op.seed();
        break;
    case OperatorKind::Dense:
        j["in_shape"] = op.in_shape();
        j["matrix"] = op.matrix().storage();
        break;
    }
    return j;
}

inline LinearOperator from_descriptor(const nlohmann::json& j) {
    try {
        const auto kind = parse_operator_kind(j.at("kind").get<std::string>());
        switch (kind) {
        case OperatorKind::HadamardCs: {
            auto op = LinearOperator::hadamard_cs(j.at("side").get<std::size_t>(),
                                                  j.at("rows").get<std::vector<std::size_t>>(),
                                                  j.value("seed", std::uint64_t{0}));
            UTOPY_REQUIRE(op.out_size() == j.at("m").get<std::size_t>() && op.in_size() == j.at("n").get<std::size_t>(),
                          "operator descriptor: n/m disagree with rows");
            return op;
        }
        case OperatorKind::GaussianBlur:
            return LinearOperator::gaussian_blur(j.at("side").get<std::size_t>(), j.at("sigma").get<double>());
        case OperatorKind::Dense: {
            const auto m = j.at("m").get<std::size_t>(), n = j.at("n").get<std::size_t>();
            Tensor<double> mat({m, n}, j.at("matrix").get<std::vector<double>>());
            return LinearOperator::dense(std::move(mat), j.value("in_shape", Shape{}));
        }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("operator descriptor: ") + e.what());
    }
    throw ContractViolation("operator descriptor: unreachable");
}

inline void save_descriptor(const std::filesystem::path& path, const LinearOperator& op) {
    std::ofstream os(path);
    if (!os) throw MissingPrerequisite("cannot write " + path.string());
    os << to_descriptor(op).dump(2) << '\n';
}

inline LinearOperator load_descriptor(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisite("operator descriptor not found: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("operator descriptor " + path.string() + ": " + e.what());
    }
    return from_descriptor(j);
}

} // namespace utopy
