#pragma once

#include <set>

#include <json.hpp>

#include "urwkv/checkpoint.hpp"
#include "urwkv/train.hpp"

namespace urwkv {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataSpec {
    bool synthetic = true;
    std::string dir;  // used when !synthetic
    std::uint64_t seed = 7;
    std::int64_t count = 200;
    std::int64_t size = 64;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataSpec data;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
        }
    }
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["stage_widths"] = c.widths();
    j["input_channels"] = c.input_channels;
    j["num_classes"] = c.num_classes;
    j["input_size"] = c.input_size;
    j["variant"] = c.variant;
    j["seed"] = c.seed;
    j["se_ratio"] = c.se_ratio;
    j["channel_mix_expansion"] = c.channel_mix_expansion;
    j["darm_on_skips"] = c.darm_on_skips;
    std::vector<std::string> dirs;
    for (auto d : c.ablation.direction_subset) dirs.emplace_back(to_string(d));
    j["ablation"] = {{"direction_subset", dirs},
                     {"dual_rwkv", c.ablation.dual_rwkv},
                     {"darm", c.ablation.darm},
                     {"sase", c.ablation.sase}};
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j,
                           {"stage_widths", "input_channels", "num_classes", "input_size", "variant", "seed",
                            "se_ratio", "channel_mix_expansion", "darm_on_skips", "ablation"},
                           "model");
    ModelConfig c;
    detail::read_field(j, "stage_widths", c.stage_widths);
    detail::read_field(j, "input_channels", c.input_channels);
    detail::read_field(j, "num_classes", c.num_classes);
    detail::read_field(j, "input_size", c.input_size);
    detail::read_field(j, "variant", c.variant);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "se_ratio", c.se_ratio);
    detail::read_field(j, "channel_mix_expansion", c.channel_mix_expansion);
    detail::read_field(j, "darm_on_skips", c.darm_on_skips);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        detail::reject_unknown(a, {"direction_subset", "dual_rwkv", "darm", "sase"}, "model.ablation");
        if (a.contains("direction_subset")) {
            std::vector<std::string> dirs;
            detail::read_field(a, "direction_subset", dirs);
            c.ablation.direction_subset.clear();
            for (const auto& d : dirs) c.ablation.direction_subset.push_back(scan_direction_from_string(d));
        }
        detail::read_field(a, "dual_rwkv", c.ablation.dual_rwkv);
        detail::read_field(a, "darm", c.ablation.darm);
        detail::read_field(a, "sase", c.ablation.sase);
    }
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"lr", c.lr},
                          {"split", c.split},       {"seed", c.seed},             {"bce_weight", c.bce_weight},
                          {"dice_weight", c.dice_weight}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"epochs", "batch_size", "lr", "split", "seed", "bce_weight", "dice_weight"}, "train");
    TrainConfig c;
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "batch_size", c.batch_size);
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "split", c.split);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "bce_weight", c.bce_weight);
    detail::read_field(j, "dice_weight", c.dice_weight);
    return c;
}

inline nlohmann::json data_spec_to_json(const DataSpec& d) {
    nlohmann::json j;
    if (d.synthetic) {
        j["synthetic"] = {{"seed", d.seed}, {"count", d.count}, {"size", d.size}};
    } else {
        j["dir"] = d.dir;
    }
    return j;
}

inline DataSpec data_spec_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"synthetic", "dir"}, "data");
    DataSpec d;
    if (j.contains("dir") && j.contains("synthetic"))
        throw ConfigError("config: data must give either 'dir' or 'synthetic', not both");
    if (j.contains("dir")) {
        d.synthetic = false;
        detail::read_field(j, "dir", d.dir);
        if (d.dir.empty()) throw ConfigError("config: data.dir must be a nonempty path");
    } else if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        detail::reject_unknown(s, {"seed", "count", "size"}, "data.synthetic");
        detail::read_field(s, "seed", d.seed);
        detail::read_field(s, "count", d.count);
        detail::read_field(s, "size", d.size);
    }
    return d;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return nlohmann::json{
        {"model", model_config_to_json(c.model)}, {"train", train_config_to_json(c.train)},
        {"data", data_spec_to_json(c.data)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"model", "train", "data"}, "run");
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("data")) c.data = data_spec_from_json(j.at("data"));
    try {
        c.model.validate();
        c.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

template <class Real>
void save_model(const std::string& path, const Model<Real>& m) {
    write_checkpoint(path, m.state, model_config_to_json(m.cfg).dump());
}

template <class Real>
Model<Real> load_model(const std::string& path) {
    auto ck = read_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception&) {
        fail("checkpoint: embedded config blob is not valid JSON");
    }
    auto m = build<Real>(model_config_from_json(j));
    load_state(m, ck);
    return m;
}

}  // namespace urwkv
