#include "dastm/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dastm/error.hpp"
#include "dastm/flops.hpp"

namespace dastm {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

std::optional<double> read_budget(const json& v, const char* key) {
    if (v.is_null()) return std::nullopt;
    if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "unlimited")) return std::nullopt;
    if (!v.is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number or null");
    const double b = v.get<double>();
    if (!(b >= 0.0)) throw ConfigError(std::string("config key '") + key + "' must be >= 0");
    return b;
}

json budget_json(const std::optional<double>& b) { return b ? json(*b) : json(nullptr); }

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed", "channels", "reduction", "gate_d", "key_dim", "value_dim", "head_hidden", "crop", "tau",
        "enhancement", "steps", "batch", "lr_start", "lr_end", "momentum", "weight_decay", "grad_clip",
        "backbone_unfreeze_step", "lambda_cost", "tau_anneal", "tau_end", "memory_frames", "query_jitter",
        "memory_jitter", "train_gate", "memory_capacity", "write_period", "write_threshold", "mode", "budget",
        "data_seed", "n_train", "n_eval", "ablation_seeds", "random_trials", "budgets"};
    return keys;
}

}  // namespace

GateMode parse_mode(const std::string& s) {
    if (s == "soft") return GateMode::soft;
    if (s == "hard") return GateMode::hard;
    if (s == "budgeted") return GateMode::budgeted;
    throw ConfigError("unknown mode '" + s + "' (expected soft, hard or budgeted)");
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.tau = model.tau;
    return t;
}

TrackOptions RunConfig::track_options() const {
    TrackOptions o;
    o.mode = mode;
    o.budget = budget;
    o.policy = memory;
    return o;
}

void RunConfig::validate() const {
    model.validate();
    train_config().validate();
    if (memory.capacity < 1) throw ConfigError("memory_capacity must be >= 1");
    if (memory.write_period < 1) throw ConfigError("write_period must be >= 1");
    if (mode == GateMode::budgeted && !budget) throw ConfigError("budgeted mode needs a finite budget");
    if (n_train < 1 || n_eval < 1) throw ConfigError("n_train and n_eval must be >= 1");
    if (ablation_seeds.empty()) throw ConfigError("ablation_seeds must not be empty");
    if (random_trials < 1) throw ConfigError("random_trials must be >= 1");
}

RunConfig default_run_config() {
    RunConfig cfg;
    const AttentionShape shape{cfg.model.channels, cfg.model.reduction, cfg.model.feature_size(),
                               cfg.model.feature_size()};
    const BranchCostTable costs = branch_costs(shape);
    cfg.budgets = {0.0, costs[Branch::se], costs[Branch::ca], costs[Branch::cbam], std::nullopt};
    return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known_keys().contains(key)) throw ConfigError("unknown config key '" + key + "'");

    RunConfig c = default_run_config();
    read(j, "seed", c.seed);
    read(j, "channels", c.model.channels);
    read(j, "reduction", c.model.reduction);
    read(j, "gate_d", c.model.gate_d);
    read(j, "key_dim", c.model.key_dim);
    read(j, "value_dim", c.model.value_dim);
    read(j, "head_hidden", c.model.head_hidden);
    read(j, "crop", c.model.crop);
    read(j, "tau", c.model.tau);
    if (j.contains("enhancement")) {
        std::string e;
        read(j, "enhancement", e);
        c.model.enhancement = parse_enhancement(e);
    }
    read(j, "steps", c.train.steps);
    read(j, "batch", c.train.batch);
    read(j, "lr_start", c.train.lr_start);
    read(j, "lr_end", c.train.lr_end);
    read(j, "momentum", c.train.momentum);
    read(j, "weight_decay", c.train.weight_decay);
    read(j, "grad_clip", c.train.grad_clip);
    read(j, "backbone_unfreeze_step", c.train.backbone_unfreeze_step);
    read(j, "lambda_cost", c.train.lambda_cost);
    read(j, "tau_anneal", c.train.tau_anneal);
    read(j, "tau_end", c.train.tau_end);
    read(j, "memory_frames", c.train.memory_frames);
    read(j, "query_jitter", c.train.query_jitter);
    read(j, "memory_jitter", c.train.memory_jitter);
    if (j.contains("train_gate")) {
        std::string g;
        read(j, "train_gate", g);
        c.train.train_gate = parse_train_gate(g);
    }
    read(j, "memory_capacity", c.memory.capacity);
    read(j, "write_period", c.memory.write_period);
    read(j, "write_threshold", c.memory.write_threshold);
    if (j.contains("mode")) {
        std::string m;
        read(j, "mode", m);
        c.mode = parse_mode(m);
    }
    if (j.contains("budget")) c.budget = read_budget(j.at("budget"), "budget");
    read(j, "data_seed", c.data_seed);
    read(j, "n_train", c.n_train);
    read(j, "n_eval", c.n_eval);
    read(j, "ablation_seeds", c.ablation_seeds);
    read(j, "random_trials", c.random_trials);
    if (j.contains("budgets")) {
        const json& b = j.at("budgets");
        if (!b.is_array()) throw ConfigError("config key 'budgets' must be an array");
        c.budgets.clear();
        for (const json& v : b) c.budgets.push_back(read_budget(v, "budgets"));
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str());
}

std::string to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["channels"] = c.model.channels;
    j["reduction"] = c.model.reduction;
    j["gate_d"] = c.model.gate_d;
    j["key_dim"] = c.model.key_dim;
    j["value_dim"] = c.model.value_dim;
    j["head_hidden"] = c.model.head_hidden;
    j["crop"] = c.model.crop;
    j["tau"] = c.model.tau;
    j["enhancement"] = enhancement_name(c.model.enhancement);
    j["steps"] = c.train.steps;
    j["batch"] = c.train.batch;
    j["lr_start"] = c.train.lr_start;
    j["lr_end"] = c.train.lr_end;
    j["momentum"] = c.train.momentum;
    j["weight_decay"] = c.train.weight_decay;
    j["grad_clip"] = c.train.grad_clip;
    j["backbone_unfreeze_step"] = c.train.backbone_unfreeze_step;
    j["lambda_cost"] = c.train.lambda_cost;
    j["tau_anneal"] = c.train.tau_anneal;
    j["tau_end"] = c.train.tau_end;
    j["memory_frames"] = c.train.memory_frames;
    j["query_jitter"] = c.train.query_jitter;
    j["memory_jitter"] = c.train.memory_jitter;
    j["train_gate"] = train_gate_name(c.train.train_gate);
    j["memory_capacity"] = c.memory.capacity;
    j["write_period"] = c.memory.write_period;
    j["write_threshold"] = c.memory.write_threshold;
    j["mode"] = mode_name(c.mode);
    j["budget"] = budget_json(c.budget);
    j["data_seed"] = c.data_seed;
    j["n_train"] = c.n_train;
    j["n_eval"] = c.n_eval;
    j["ablation_seeds"] = c.ablation_seeds;
    j["random_trials"] = c.random_trials;
    json budgets = json::array();
    for (const auto& b : c.budgets) budgets.push_back(budget_json(b));
    j["budgets"] = budgets;
    return j.dump(2) + "\n";
}

}  // namespace dastm
