#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dastm/config.hpp"
#include "dastm/metrics.hpp"
#include "dastm/model.hpp"
#include "dastm/scenes.hpp"
#include "dastm/tracker.hpp"

namespace dastm {

struct EvalSummary {
    double ao = 0;
    double sr50 = 0;
    double sr75 = 0;
    double success_auc = 0;
    double precision = 0;
    double activation_rate = 0;
    double mean_flops = 0;  // attention FLOPs per frame
};

struct Benchmark {
    std::vector<Sequence> train;
    std::vector<Sequence> eval;
};

Benchmark make_benchmark(int n_train, int n_eval, std::uint64_t data_seed);

/// Tracks every sequence with the same options. Random decisions use
/// random_seed + sequence index so trials are reproducible.
EvalSummary evaluate(const Model& model, std::span<const Sequence> sequences, const TrackOptions& options);

/// Builds the variant from cfg.model and trains it on the benchmark train split.
Model train_variant(const RunConfig& cfg, Enhancement enhancement, TrainGate train_gate, std::uint64_t seed,
                    std::span<const Sequence> train);

struct ReportTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string csv() const;
};

using AblationLog = std::function<void(const std::string&)>;

/// table1: the six fixed attention configurations.
/// table2: baseline, static all-branch stacking, gated.
/// table3: train/test decisions Random/Random, Gate/Random, Gate/Gate.
/// table4: budget sweep for the gated model.
/// Every metric is the mean over cfg.ablation_seeds. Throws ConfigError for an unknown kind.
ReportTable run_ablation(const std::string& kind, const RunConfig& cfg, const AblationLog& log = {});

}  // namespace dastm
