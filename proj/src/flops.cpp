#include "dastm/flops.hpp"

#include <string>

#include "dastm/error.hpp"

namespace dastm {

namespace {

void require_nonneg(int v, const char* what) {
    if (v < 0) throw ConfigError(std::string("negative layer dimension: ") + what);
}

}  // namespace

double conv_flops(int k, int cin, int cout, int hout, int wout) {
    require_nonneg(cin, "cin");
    require_nonneg(cout, "cout");
    require_nonneg(hout, "hout");
    require_nonneg(wout, "wout");
    if (k < 1) throw ConfigError("conv kernel size must be >= 1");
    return 2.0 * k * k * static_cast<double>(cin) * cout * hout * wout;
}

double linear_flops(int in, int out) {
    require_nonneg(in, "in");
    require_nonneg(out, "out");
    return 2.0 * in * out;
}

double elementwise_flops(double elements) {
    if (elements < 0) throw ConfigError("negative element count");
    return elements;
}

double pool_flops(double input_elements) {
    if (input_elements < 0) throw ConfigError("negative element count");
    return input_elements;
}

double flops_layer(LayerKind kind, const LayerDims& d) {
    switch (kind) {
        case LayerKind::conv:
            return conv_flops(d.k, d.cin, d.cout, d.hout, d.wout);
        case LayerKind::linear:
            return linear_flops(d.cin, d.cout);
        case LayerKind::elementwise:
            return elementwise_flops(d.elements);
        case LayerKind::pool:
            return pool_flops(d.elements);
    }
    throw ConfigError("unknown layer kind");
}

double se_flops(const AttentionShape& s) {
    const int m = s.channels / s.reduction;
    const double chw = static_cast<double>(s.channels) * s.h * s.w;
    return pool_flops(chw)                        // global average
           + linear_flops(s.channels, m)          // squeeze FC
           + elementwise_flops(m)                 // relu
           + linear_flops(m, s.channels)          // excite FC
           + elementwise_flops(s.channels)        // sigmoid
           + elementwise_flops(chw);              // channel rescale
}

double ca_flops(const AttentionShape& s) {
    const int m = s.channels / s.reduction;
    const double chw = static_cast<double>(s.channels) * s.h * s.w;
    return pool_flops(chw) + pool_flops(chw)                       // pools along w and h
           + conv_flops(1, s.channels, m, s.h + s.w, 1)           // shared 1x1 conv on the joint strip
           + elementwise_flops(static_cast<double>(m) * (s.h + s.w))  // relu
           + conv_flops(1, m, s.channels, s.h, 1)                 // h-path conv
           + conv_flops(1, m, s.channels, 1, s.w)                 // w-path conv
           + elementwise_flops(static_cast<double>(s.channels) * (s.h + s.w))  // sigmoids
           + 2.0 * elementwise_flops(chw);                        // two gate products
}

double cbam_flops(const AttentionShape& s) {
    const int m = s.channels / s.reduction;
    const double chw = static_cast<double>(s.channels) * s.h * s.w;
    const double hw = static_cast<double>(s.h) * s.w;
    const double mlp = linear_flops(s.channels, m) + elementwise_flops(m) + linear_flops(m, s.channels);
    const int k = 7;
    return pool_flops(chw) + pool_flops(chw)  // avg and max
           + 2.0 * mlp                        // shared MLP on both descriptors
           + elementwise_flops(s.channels)    // descriptor sum
           + elementwise_flops(s.channels)    // sigmoid
           + elementwise_flops(chw)           // channel rescale
           + pool_flops(chw) + pool_flops(chw)  // mean and max over channels
           + conv_flops(k, 2, 1, s.h, s.w)    // 7x7 spatial conv
           + elementwise_flops(hw)            // sigmoid
           + elementwise_flops(chw);          // spatial rescale
}

double gate_flops(const AttentionShape& s, int scale_d) {
    const int m = s.channels / scale_d;
    const double chw = static_cast<double>(s.channels) * s.h * s.w;
    return pool_flops(chw) + linear_flops(s.channels, m) + elementwise_flops(m) + linear_flops(m, kBranchCount) +
           elementwise_flops(3.0 * kBranchCount);  // softmax: exp, sum, divide
}

BranchCostTable branch_costs(const AttentionShape& s) {
    if (s.channels < 1 || s.reduction < 1 || s.channels % s.reduction != 0 || s.h < 1 || s.w < 1)
        throw ConfigError("invalid attention configuration for cost table");
    BranchCostTable t;
    t.cost = {0.0, se_flops(s), ca_flops(s), cbam_flops(s)};
    return t;
}

double expected_cost(const std::array<double, kBranchCount>& weights, const BranchCostTable& costs) {
    double e = 0.0;
    for (int i = 0; i < kBranchCount; ++i) e += weights[i] * costs.cost[i];
    return e;
}

double reduction_vs_parallel(const std::vector<int>& selected, const BranchCostTable& costs, double gate_cost) {
    if (selected.empty()) throw ParameterError("reduction_vs_parallel needs a nonempty trace");
    const double parallel = costs.attention_total();
    if (!(parallel > 0.0)) throw ParameterError("parallel attention cost is zero");
    double total = 0.0;
    for (int b : selected) {
        if (b < 0 || b >= kBranchCount) throw ParameterError("branch index out of range in trace");
        total += costs.cost[b] + gate_cost;
    }
    return 1.0 - (total / static_cast<double>(selected.size())) / parallel;
}

}  // namespace dastm
