#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "rsovs/data.hpp"
#include "rsovs/pipeline.hpp"

namespace rsovs {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 4;
    int64_t max_iterations = 100000;
    int64_t image_side = 384;
    uint64_t seed = 0;
    int32_t ignore_index = kIgnoreIndex;
    int64_t eval_every = 1000;
    int64_t checkpoint_every = 1000;
    std::string eval_split = "val";  // falls back to train when the split is empty

    void validate(const ModelConfig& model) const;
};

struct DataConfig {
    std::string manifest;                 // dataset manifest path
    std::vector<std::string> categories;  // empty: the manifest's category list
};

/// Everything a run needs; serialized with every output it produces.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
    DataConfig data;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict: unknown keys and wrongly typed values are ConfigErrors.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies one "section.key=value" override. The value is read as JSON when it
/// parses, otherwise as a string; comma lists are accepted for list-valued keys.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

/// Defaults, then the optional file, then the overrides in order.
RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace rsovs
