/*
 * io.hpp
 *
 * Network model files: a JSON descriptor (spec, hyperparameters,
 * preprocessing, parameter layout) next to a flat binary of little-endian
 * float64 values in declared layer order.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../data.hpp"
#include "network.hpp"
#include "training.hpp"

namespace strokelab::nn {

template <typename Scalar>
struct NetworkModel {
    Network<Scalar> network;
    TrainConfig config;
    ClassWeights class_weights;
    data::PreprocessArtifacts preprocessing;

    double threshold() const noexcept { return config.threshold; }
};

template <typename Scalar>
std::vector<double> flatten_parameters(const Network<Scalar>& net) {
    std::vector<double> out;
    for (const auto* p : net.parameters(true))
        for (Scalar v : p->value.data()) out.push_back(static_cast<double>(v));
    return out;
}

inline std::string encode_le_f64(const std::vector<double>& values) {
    std::string bytes;
    bytes.reserve(values.size() * 8);
    for (double v : values) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            bytes.push_back(static_cast<char>(bits & 0xFF));
            bits >>= 8;
        }
    }
    return bytes;
}

inline std::vector<double> decode_le_f64(const std::string& bytes) {
    if (bytes.size() % 8 != 0) throw DataError("model", "parameter file size is not a multiple of 8");
    std::vector<double> out(bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)]);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

/// Descriptor JSON; `parameters_file` names the companion binary.
template <typename Scalar>
json describe(const NetworkModel<Scalar>& model, const std::string& parameters_file) {
    json layout = json::array();
    std::size_t offset = 0;
    for (const auto* p : model.network.parameters(true)) {
        layout.push_back({{"name", p->name},
                          {"shape", {p->value.rows(), p->value.cols()}},
                          {"offset", offset},
                          {"trainable", p->trainable}});
        offset += p->value.size();
    }
    return json{{"schema_version", 1},
                {"model", "network"},
                {"spec", model.network.spec().to_json()},
                {"train_config", model.config.to_json()},
                {"class_weights", model.class_weights.to_json()},
                {"threshold", model.config.threshold},
                {"preprocessing_fingerprint", model.preprocessing.fingerprint()},
                {"preprocessing", model.preprocessing.to_json()},
                {"parameters_file", parameters_file},
                {"parameter_count", offset},
                {"layout", layout}};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("io", "cannot write '" + path.string() + "'");
    out << bytes;
    if (!out) throw DataError("io", "write failed for '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("io", "cannot read '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes `<stem>.json` and `<stem>.bin` next to each other.
template <typename Scalar>
void save_network(const NetworkModel<Scalar>& model, const std::filesystem::path& json_path) {
    auto bin_path = json_path;
    bin_path.replace_extension(".bin");
    write_file(json_path, describe(model, bin_path.filename().string()).dump(2) + "\n");
    write_file(bin_path, encode_le_f64(flatten_parameters(model.network)));
}

inline NetworkModel<double> load_network(const std::filesystem::path& json_path) {
    json j;
    try {
        j = json::parse(read_file(json_path));
    } catch (const json::parse_error& e) {
        throw DataError("model", json_path.string() + ": " + e.what());
    }
    if (j.value("model", "") != "network") throw DataError("model", json_path.string() + " is not a network model");
    if (j.at("schema_version").get<int>() != 1) throw DataError("model", "unsupported network schema version");

    const auto spec = NetworkSpec::from_json(j.at("spec"));
    NetworkModel<double> model{Network<double>(spec, 0), TrainConfig::from_json(j.at("train_config")),
                               ClassWeights::from_json(j.at("class_weights")),
                               data::PreprocessArtifacts::from_json(j.at("preprocessing"))};
    if (model.preprocessing.fingerprint() != j.at("preprocessing_fingerprint").get<std::string>()) {
        throw DataError("model", "preprocessing fingerprint does not match its artifacts");
    }
    const auto values = decode_le_f64(read_file(json_path.parent_path() / j.at("parameters_file").get<std::string>()));
    auto params = model.network.parameters(true);
    const auto& layout = j.at("layout");
    if (layout.size() != params.size()) throw DataError("model", "parameter layout does not match the spec");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (layout[i].at("name").get<std::string>() != p.name || layout[i].at("offset").get<std::size_t>() != offset) {
            throw DataError("model", "parameter layout entry " + std::to_string(i) + " does not match " + p.name);
        }
        if (offset + p.value.size() > values.size()) throw DataError("model", "parameter file is truncated");
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                  values.begin() + static_cast<std::ptrdiff_t>(offset + p.value.size()), p.value.data().begin());
        offset += p.value.size();
    }
    if (offset != values.size()) throw DataError("model", "parameter file has trailing values");
    return model;
}

}  // namespace strokelab::nn
