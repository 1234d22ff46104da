#include "blastoseg/run_config.hpp"

#include <fstream>
#include <set>

#include "blastoseg/errors.hpp"
#include "blastoseg/model_io.hpp"

namespace blastoseg {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "depth",           "base_kernels",     "encoder_kernels", "decoder_kernels",
        "dilation_rates",  "bottleneck_channels", "input_channels", "dropout_rate",
        "image_size",      "batch_size",       "max_epochs",      "lr0",
        "lr_factor",       "lr_patience",      "early_stop_patience", "threshold",
        "seed",            "data_dir",         "out_dir",         "target",
        "train_frac",      "rotation_step_deg", "threads",
    };
    return keys;
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw ConfigError("train_frac must be in (0,1)");
    if (rotation_step_deg <= 0 || 360 % rotation_step_deg != 0)
        throw ConfigError("rotation_step_deg must divide 360");
    if (threads < 0) throw ConfigError("threads must be >= 0");
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = model_config_to_json(model);
    j["batch_size"] = train.batch_size;
    j["max_epochs"] = train.max_epochs;
    j["lr0"] = train.lr0;
    j["lr_factor"] = train.lr_factor;
    j["lr_patience"] = train.lr_patience;
    j["early_stop_patience"] = train.early_stop_patience;
    j["threshold"] = train.threshold;
    j["seed"] = train.seed;
    j["data_dir"] = data_dir;
    j["out_dir"] = out_dir;
    j["target"] = target_name(target);
    j["train_frac"] = train_frac;
    j["rotation_step_deg"] = rotation_step_deg;
    j["threads"] = threads;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (known_keys().find(key) == known_keys().end())
            throw ConfigError("unknown config field '" + key + "'");
    }

    RunConfig cfg;
    try {
        if (j.contains("encoder_kernels"))
            cfg.model.encoder_kernels = j["encoder_kernels"].get<std::vector<int>>();
        cfg.model.depth = j.value("depth", static_cast<int>(cfg.model.encoder_kernels.size()));
        cfg.model.base_kernels = j.value("base_kernels", cfg.model.encoder_kernels.front());
        cfg.model.decoder_kernels = std::vector<int>(cfg.model.encoder_kernels.rbegin(),
                                                     cfg.model.encoder_kernels.rend());
        if (j.contains("decoder_kernels"))
            cfg.model.decoder_kernels = j["decoder_kernels"].get<std::vector<int>>();
        if (j.contains("dilation_rates"))
            cfg.model.dilation_rates = j["dilation_rates"].get<std::vector<int>>();
        cfg.model.bottleneck_channels = j.value("bottleneck_channels", cfg.model.bottleneck_channels);
        cfg.model.input_channels = j.value("input_channels", cfg.model.input_channels);
        cfg.model.dropout_rate = j.value("dropout_rate", cfg.model.dropout_rate);
        cfg.model.image_size = j.value("image_size", cfg.model.image_size);

        cfg.train.batch_size = j.value("batch_size", cfg.train.batch_size);
        cfg.train.max_epochs = j.value("max_epochs", cfg.train.max_epochs);
        cfg.train.lr0 = j.value("lr0", cfg.train.lr0);
        cfg.train.lr_factor = j.value("lr_factor", cfg.train.lr_factor);
        cfg.train.lr_patience = j.value("lr_patience", cfg.train.lr_patience);
        cfg.train.early_stop_patience = j.value("early_stop_patience", cfg.train.early_stop_patience);
        cfg.train.threshold = j.value("threshold", cfg.train.threshold);
        cfg.train.seed = j.value("seed", cfg.train.seed);

        cfg.data_dir = j.value("data_dir", cfg.data_dir);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        if (j.contains("target")) cfg.target = target_from_name(j["target"].get<std::string>());
        cfg.train_frac = j.value("train_frac", cfg.train_frac);
        cfg.rotation_step_deg = j.value("rotation_step_deg", cfg.rotation_step_deg);
        cfg.threads = j.value("threads", cfg.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write config snapshot: " + path);
    out << to_json().dump(2) << "\n";
}

} // namespace blastoseg
