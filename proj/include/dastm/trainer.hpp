#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dastm/model.hpp"
#include "dastm/scenes.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

// How memory frames are enhanced during gated training: the soft gate, or a
// uniformly drawn one-hot branch per frame.
enum class TrainGate { soft, random };
const char* train_gate_name(TrainGate g);
TrainGate parse_train_gate(const std::string& s);

struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    double lr_start = 0.005;
    double lr_end = 0.0001;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    double grad_clip = 10.0;      // max global gradient L2 norm, 0 disables
    int backbone_unfreeze_step = 400;
    double lambda_cost = 0.01;
    double tau = 1.0;
    bool tau_anneal = false;
    double tau_end = 0.1;
    int memory_frames = 3;
    double query_jitter = 12.0;   // max |offset| of the query crop center, px
    double memory_jitter = 2.0;   // max |offset| of memory crop centers, px
    TrainGate train_gate = TrainGate::soft;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Geometric interpolation lr_start * (lr_end / lr_start)^(step / steps).
/// Throws ParameterError for step outside [0, steps].
double lr_at_step(int step, const TrainConfig& cfg);
double tau_at_step(int step, const TrainConfig& cfg);

/// Momentum SGD with coupled weight decay, in place:
///   g' = g + wd * p (only where decay[i]); v = momentum * v + g'; p -= lr * v.
/// Entries with trainable[i] false are left untouched. Empty masks mean all true.
void sgd_step(ParamSet& params, const std::vector<std::vector<double>>& grads, std::vector<std::vector<double>>& velocity,
              double lr, double momentum, double weight_decay, const std::vector<bool>& decay = {},
              const std::vector<bool>& trainable = {});

/// Rescales every gradient so the global L2 norm is at most max_norm.
/// max_norm 0 disables. Returns the norm before clipping.
double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm);

struct LossRecord {
    int step = 0;
    double loss = 0;
    double lr = 0;
    double expected_flops = 0;  // mean per memory frame of sum_i K_i cost_i
};

struct TrainSample {
    Tensor4 query_crop;                 // (1, 1, crop, crop)
    std::vector<Tensor4> memory_crops;  // (1, 1, crop, crop) each
    BBox query_box;                     // gt in query-crop coordinates
};

/// Draws one sample: query frame q in [M, len-1], memory = frame 0 plus M-1
/// distinct frames from [1, q-1], crops around (jittered) gt centers.
TrainSample draw_sample(const Sequence& seq, const TrainConfig& cfg, int crop, Rng& rng);

/// Mean loss over samples; the returned tensor is differentiable. expected_flops
/// receives the mean attention cost per memory frame.
Tensor4 batch_loss(const Model& model, std::span<const TrainSample> samples, const TrainConfig& cfg, Rng& rng,
                   double* expected_flops = nullptr);

using TrainProgress = std::function<void(const LossRecord&)>;

/// Trains in place and returns the loss history (one record per step).
/// Throws ParameterError on an empty spec list and NumericError on a
/// non-finite loss or gradient.
std::vector<LossRecord> train(const TrainConfig& cfg, Model& model, std::span<const ScenarioSpec> specs,
                              const TrainProgress& progress = {});
std::vector<LossRecord> train(const TrainConfig& cfg, Model& model, std::span<const Sequence> sequences,
                              const TrainProgress& progress = {});

std::string loss_history_csv(const std::vector<LossRecord>& history);

}  // namespace dastm
