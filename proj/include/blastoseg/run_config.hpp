#pragma once

// One JSON document that pins every knob of a run; unknown keys are
// rejected so a typo cannot silently fall back to a default.

#include <string>

#include "json.hpp"

#include "blastoseg/data.hpp"
#include "blastoseg/model.hpp"
#include "blastoseg/train.hpp"

namespace blastoseg {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    std::string out_dir;
    Target target = Target::kIcm;
    double train_frac = 0.85;
    int rotation_step_deg = 10;
    int threads = 0;  // 0 = BLASTOSEG_THREADS env or hardware concurrency

    void validate() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    void save(const std::string& path) const;
};

} // namespace blastoseg
