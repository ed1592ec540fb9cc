#pragma once

#include <string>
#include <vector>

#include "dastm/gate.hpp"
#include "dastm/tensor.hpp"

// Shape-only FLOP accounting. Convention: 2 FLOPs per multiply-accumulate for
// conv and linear layers; 1 per element for activations, elementwise products
// and additions; 1 per input element for pooling. Biases are not counted.

namespace dastm {

enum class LayerKind { conv, linear, elementwise, pool };

struct LayerDims {
    int k = 1;
    int cin = 0;
    int cout = 0;
    int hout = 0;
    int wout = 0;
    // elementwise: output element count; pool: input element count.
    double elements = 0;
};

double flops_layer(LayerKind kind, const LayerDims& dims);

double conv_flops(int k, int cin, int cout, int hout, int wout);
double linear_flops(int in, int out);
double elementwise_flops(double elements);
double pool_flops(double input_elements);

struct AttentionShape {
    int channels = 32;
    int reduction = 4;
    int h = 16;
    int w = 16;
};

double se_flops(const AttentionShape& s);
double ca_flops(const AttentionShape& s);
double cbam_flops(const AttentionShape& s);
// The gating unit itself (pool, two FCs, relu, softmax over B).
double gate_flops(const AttentionShape& s, int scale_d);

BranchCostTable branch_costs(const AttentionShape& s);

/// Expected branch cost under (possibly soft) weights: sum_i K_i cost_i.
double expected_cost(const std::array<double, kBranchCount>& weights, const BranchCostTable& costs);

/// 1 - mean(selected cost [+ gate cost]) / (cost(SE) + cost(CA) + cost(CBAM)).
/// selected holds one Branch index per frame. Throws ParameterError on an
/// empty trace or zero parallel cost.
double reduction_vs_parallel(const std::vector<int>& selected, const BranchCostTable& costs, double gate_cost = 0.0);

struct FlopsLine {
    std::string component;
    double flops = 0;
};

struct FlopsReport {
    std::vector<FlopsLine> per_frame;  // fixed per-frame components
    BranchCostTable branches;
    double gate = 0;
    double expected_attention = 0;     // sum_i K_i cost_i for the supplied weights
    double per_frame_total = 0;        // fixed components + expected attention + gate
    double cumulative = 0;             // per_frame_total * frames
};

}  // namespace dastm
