#include "rsovs/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace rsovs {

using nlohmann::json;

void TrainConfig::validate(const ModelConfig& model) const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("train betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train.eps must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (max_iterations < 1) throw ConfigError("train.max_iterations must be positive");
    if (eval_every < 1 || checkpoint_every < 1) throw ConfigError("train eval/checkpoint intervals must be positive");
    if (image_side < 1) throw ConfigError("train.image_side must be positive");
    if (model.backbone_kind == "mock" && image_side % model.backbone.patch_size != 0)
        throw ConfigError("train.image_side " + std::to_string(image_side) + " is not divisible by patch size " +
                          std::to_string(model.backbone.patch_size));
    if (ignore_index < 0 || ignore_index > 255) throw ConfigError("train.ignore_index must fit in 8 bits");
    if (eval_split != "train" && eval_split != "val") throw ConfigError("train.eval_split must be train or val");
}

void RunConfig::validate() const {
    model.validate();
    train.validate(model);
    synth.validate();
    std::set<std::string> seen;
    for (const auto& c : data.categories)
        if (c.empty() || !seen.insert(c).second) throw ConfigError("data.categories must be unique and non-empty");
}

json to_json(const RunConfig& c) {
    std::vector<int> orientations;
    for (auto o : c.model.orientation.orientations) orientations.push_back(o.quarter_turns());
    json j;
    j["model"] = {{"backbone", c.model.backbone_kind},
                  {"backbone_seed", c.model.backbone_seed},
                  {"backbone_trainable", c.model.backbone_trainable},
                  {"backbone_weights", c.model.backbone_weights},
                  {"embed_dim", c.model.backbone.embed_dim},
                  {"patch_size", c.model.backbone.patch_size},
                  {"level_ids", c.model.backbone.level_ids},
                  {"orientations", orientations},
                  {"d_f", c.model.d_f},
                  {"embed_kernel", c.model.embed_kernel},
                  {"refine_repeats", c.model.refine.repeats},
                  {"window_size", c.model.refine.window_size},
                  {"heads", c.model.refine.heads},
                  {"decoder_stages", c.model.decoder.num_stages},
                  {"upsample_factor", c.model.decoder.upsample_factor},
                  {"prompt", c.model.prompt.pattern()}};
    j["train"] = {{"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"batch_size", c.train.batch_size},
                  {"max_iterations", c.train.max_iterations},
                  {"image_side", c.train.image_side},
                  {"seed", c.train.seed},
                  {"ignore_index", c.train.ignore_index},
                  {"eval_every", c.train.eval_every},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"eval_split", c.train.eval_split}};
    j["synth"] = {{"num_images", c.synth.num_images},
                  {"image_side", c.synth.image_side},
                  {"num_categories", c.synth.num_categories},
                  {"min_shapes", c.synth.min_shapes},
                  {"max_shapes", c.synth.max_shapes},
                  {"scale_min", c.synth.scale_min},
                  {"scale_max", c.synth.scale_max},
                  {"orientation_jitter", c.synth.orientation_jitter},
                  {"seed", c.synth.seed},
                  {"val_fraction", c.synth.val_fraction},
                  {"val_rotated_copy", c.synth.val_rotated_copy}};
    j["data"] = {{"manifest", c.data.manifest}, {"categories", c.data.categories}};
    return j;
}

namespace {

bool compatible(const json& base, const json& v) {
    switch (base.type()) {
        case json::value_t::number_float:
            return v.is_number();
        case json::value_t::number_integer:
            return v.is_number_integer();
        case json::value_t::number_unsigned:
            return v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0);
        default:
            return base.type() == v.type();
    }
}

void merge_checked(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ConfigError("config section " + (prefix.empty() ? "<root>" : prefix) + " must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key " + key);
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), key);
        } else {
            if (!compatible(slot, it.value()))
                throw ConfigError("config key " + key + " expects " + slot.type_name() + ", got " + it.value().dump());
            slot = it.value();
        }
    }
}

RunConfig parse_merged(const json& j) {
    RunConfig c;
    try {
        const auto& m = j.at("model");
        c.model.backbone_kind = m.at("backbone").get<std::string>();
        c.model.backbone_seed = m.at("backbone_seed").get<uint64_t>();
        c.model.backbone_trainable = m.at("backbone_trainable").get<bool>();
        c.model.backbone_weights = m.at("backbone_weights").get<std::string>();
        c.model.backbone.embed_dim = m.at("embed_dim").get<int64_t>();
        c.model.backbone.patch_size = m.at("patch_size").get<int64_t>();
        c.model.backbone.level_ids = m.at("level_ids").get<std::vector<int>>();
        c.model.orientation.orientations.clear();
        for (int o : m.at("orientations").get<std::vector<int>>()) {
            if (o < 0 || o > 3) throw ConfigError("model.orientations entries must be quarter turns in 0..3");
            c.model.orientation.orientations.emplace_back(o);
        }
        c.model.d_f = m.at("d_f").get<int64_t>();
        c.model.embed_kernel = m.at("embed_kernel").get<int64_t>();
        c.model.refine.repeats = m.at("refine_repeats").get<int64_t>();
        c.model.refine.window_size = m.at("window_size").get<int64_t>();
        c.model.refine.heads = m.at("heads").get<int64_t>();
        c.model.decoder.num_stages = m.at("decoder_stages").get<int64_t>();
        c.model.decoder.upsample_factor = m.at("upsample_factor").get<int64_t>();
        c.model.prompt = PromptTemplate(m.at("prompt").get<std::string>());

        const auto& t = j.at("train");
        c.train.lr = t.at("lr").get<double>();
        c.train.weight_decay = t.at("weight_decay").get<double>();
        c.train.beta1 = t.at("beta1").get<double>();
        c.train.beta2 = t.at("beta2").get<double>();
        c.train.eps = t.at("eps").get<double>();
        c.train.batch_size = t.at("batch_size").get<int64_t>();
        c.train.max_iterations = t.at("max_iterations").get<int64_t>();
        c.train.image_side = t.at("image_side").get<int64_t>();
        c.train.seed = t.at("seed").get<uint64_t>();
        c.train.ignore_index = t.at("ignore_index").get<int32_t>();
        c.train.eval_every = t.at("eval_every").get<int64_t>();
        c.train.checkpoint_every = t.at("checkpoint_every").get<int64_t>();
        c.train.eval_split = t.at("eval_split").get<std::string>();

        const auto& s = j.at("synth");
        c.synth.num_images = s.at("num_images").get<int64_t>();
        c.synth.image_side = s.at("image_side").get<int64_t>();
        c.synth.num_categories = s.at("num_categories").get<int64_t>();
        c.synth.min_shapes = s.at("min_shapes").get<int64_t>();
        c.synth.max_shapes = s.at("max_shapes").get<int64_t>();
        c.synth.scale_min = s.at("scale_min").get<double>();
        c.synth.scale_max = s.at("scale_max").get<double>();
        c.synth.orientation_jitter = s.at("orientation_jitter").get<bool>();
        c.synth.seed = s.at("seed").get<uint64_t>();
        c.synth.val_fraction = s.at("val_fraction").get<double>();
        c.synth.val_rotated_copy = s.at("val_rotated_copy").get<bool>();

        const auto& d = j.at("data");
        c.data.manifest = d.at("manifest").get<std::string>();
        c.data.categories = d.at("categories").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<std::string> split_path(const std::string& key) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    return parts;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    json base = to_json(RunConfig{});
    merge_checked(base, j, "");
    return parse_merged(base);
}

void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    const auto parts = split_path(key);
    const json* target = &cfg;
    for (const auto& p : parts) {
        if (p.empty() || !target->is_object() || !target->contains(p)) throw ConfigError("unknown config key " + key);
        target = &(*target)[p];
    }
    if (target->is_object()) throw ConfigError("config key " + key + " names a section, not a value");

    json value;
    if (target->is_string()) {
        value = raw;
    } else {
        value = json::parse(raw, nullptr, false);
        if (target->is_array() && !value.is_array()) {
            value = json::parse("[" + raw + "]", nullptr, false);
            if (value.is_discarded()) {
                value = json::array();
                std::stringstream ss(raw);
                std::string item;
                while (std::getline(ss, item, ',')) value.push_back(item);
            }
        }
        if (value.is_discarded()) value = raw;
    }
    json patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_checked(cfg, patch, "");
}

RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json cfg = to_json(RunConfig{});
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("cannot open config file " + file.string());
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config file " + file.string() + " is not valid JSON");
        merge_checked(cfg, j, "");
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return parse_merged(cfg);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json(cfg).dump(2) << '\n';
}

}  // namespace rsovs
