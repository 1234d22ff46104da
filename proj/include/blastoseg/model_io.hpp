#pragma once

// Model <-> checkpoint glue: config JSON encoding and typed save/load.
// Values are stored as raw 32-bit floats, so a float model round-trips
// bitwise; a double model round-trips through f32 quantization.

#include <string>
#include <vector>

#include "json.hpp"

#include "blastoseg/checkpoint.hpp"
#include "blastoseg/errors.hpp"
#include "blastoseg/model.hpp"

namespace blastoseg {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"depth", cfg.depth},
                          {"base_kernels", cfg.base_kernels},
                          {"encoder_kernels", cfg.encoder_kernels},
                          {"decoder_kernels", cfg.decoder_kernels},
                          {"dilation_rates", cfg.dilation_rates},
                          {"bottleneck_channels", cfg.bottleneck_channels},
                          {"input_channels", cfg.input_channels},
                          {"dropout_rate", cfg.dropout_rate},
                          {"image_size", cfg.image_size}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.depth = j.at("depth").get<int>();
        cfg.base_kernels = j.at("base_kernels").get<int>();
        cfg.encoder_kernels = j.at("encoder_kernels").get<std::vector<int>>();
        cfg.decoder_kernels = j.at("decoder_kernels").get<std::vector<int>>();
        cfg.dilation_rates = j.at("dilation_rates").get<std::vector<int>>();
        cfg.bottleneck_channels = j.at("bottleneck_channels").get<int>();
        cfg.input_channels = j.at("input_channels").get<int>();
        cfg.dropout_rate = j.at("dropout_rate").get<double>();
        cfg.image_size = j.at("image_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model config: ") + e.what());
    }
    return cfg;
}

struct TrainingMeta {
    int epoch = 0;
    double best_loss = 0.0;
};

template <typename T>
void save_model(RDUNet<T>& model, const std::string& path, const TrainingMeta& meta = {}) {
    CheckpointData data;
    nlohmann::json j;
    j["model"] = model_config_to_json(model.config());
    j["training"] = {{"epoch", meta.epoch}, {"best_loss", meta.best_loss}};
    data.config_json = j.dump();
    for (auto& [name, tensor] : model.parameters()) {
        CheckpointTensor ct;
        ct.name = name;
        ct.dims = tensor.shape();
        ct.values.resize(static_cast<std::size_t>(tensor.numel()));
        for (index_t i = 0; i < tensor.numel(); ++i)
            ct.values[static_cast<std::size_t>(i)] = static_cast<float>(tensor[i]);
        data.tensors.push_back(std::move(ct));
    }
    for (auto& [name, vec] : model.buffers()) {
        CheckpointTensor ct;
        ct.name = name;
        ct.dims = {static_cast<index_t>(vec->size())};
        ct.values.assign(vec->begin(), vec->end());
        data.tensors.push_back(std::move(ct));
    }
    write_checkpoint_file(path, data);
}

template <typename T>
struct LoadedModel {
    RDUNet<T> model;
    TrainingMeta meta;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
    CheckpointData data = read_checkpoint_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint config block: ") + e.what());
    }
    LoadedModel<T> out;
    ModelConfig cfg = model_config_from_json(j.at("model"));
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
    if (j.contains("training")) {
        out.meta.epoch = j["training"].value("epoch", 0);
        out.meta.best_loss = j["training"].value("best_loss", 0.0);
    }

    Rng rng(0);
    out.model = RDUNet<T>::build(cfg, rng);

    std::size_t idx = 0;
    auto take = [&](const std::string& name, const Shape& dims) -> const CheckpointTensor& {
        if (idx >= data.tensors.size())
            throw FormatError("checkpoint is missing tensor '" + name + "'");
        const CheckpointTensor& ct = data.tensors[idx++];
        if (ct.name != name)
            throw FormatError("checkpoint tensor order mismatch: expected '" + name + "', found '" +
                              ct.name + "'");
        if (ct.dims != dims)
            throw FormatError("checkpoint tensor '" + name + "' shape mismatch");
        return ct;
    };
    for (auto& [name, tensor] : out.model.parameters()) {
        const CheckpointTensor& ct = take(name, tensor.shape());
        for (index_t i = 0; i < tensor.numel(); ++i)
            tensor[i] = static_cast<T>(ct.values[static_cast<std::size_t>(i)]);
    }
    for (auto& [name, vec] : out.model.buffers()) {
        const CheckpointTensor& ct = take(name, {static_cast<index_t>(vec->size())});
        for (std::size_t i = 0; i < vec->size(); ++i) (*vec)[i] = static_cast<T>(ct.values[i]);
    }
    if (idx != data.tensors.size())
        throw FormatError("checkpoint holds unexpected extra tensors");
    return out;
}

} // namespace blastoseg
