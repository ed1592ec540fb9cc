#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dastm/memory.hpp"
#include "dastm/model.hpp"
#include "dastm/tracker.hpp"
#include "dastm/trainer.hpp"

namespace dastm {

/// Flat run configuration, read from and written to JSON. Unknown keys are
/// rejected. A null budget means unlimited.
struct RunConfig {
    std::uint64_t seed = 1;

    ModelConfig model;
    TrainConfig train;
    MemoryPolicy memory;

    GateMode mode = GateMode::hard;
    std::optional<double> budget;

    std::uint64_t data_seed = 7;
    int n_train = 20;
    int n_eval = 20;

    std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
    int random_trials = 10;
    std::vector<std::optional<double>> budgets;  // table4 sweep; nullopt = unlimited

    TrainConfig train_config() const;      // train settings with seed and tau applied
    TrackOptions track_options() const;
    void validate() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

GateMode parse_mode(const std::string& s);

}  // namespace dastm
