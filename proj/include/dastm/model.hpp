#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dastm/attention.hpp"
#include "dastm/flops.hpp"
#include "dastm/gate.hpp"
#include "dastm/head.hpp"
#include "dastm/memory.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

// Memory-frame enhancement variants. The static ones average their branch
// outputs with fixed equal weights; gated uses the dynamic attention block.
enum class Enhancement { none, se, ca, cbam, se_ca, se_ca_cbam, gated };
const char* enhancement_name(Enhancement e);
Enhancement parse_enhancement(const std::string& s);
std::vector<Branch> static_branches(Enhancement e);

inline constexpr int kFeatureStride = 4;

struct ModelConfig {
    int channels = 32;
    int reduction = 4;
    int gate_d = 4;
    int key_dim = 16;
    int value_dim = 16;
    int head_hidden = 16;
    int crop = 64;
    double tau = 1.0;
    Enhancement enhancement = Enhancement::gated;

    int feature_size() const { return crop / kFeatureStride; }
    void validate() const;
};

/// Three convolutions, 1 -> 16 -> c -> c, each followed by ReLU; overall stride 4.
struct BackboneParams {
    Tensor4 conv1_w, conv1_b;
    Tensor4 conv2_w, conv2_b;
    Tensor4 conv3_w, conv3_b;

    static BackboneParams random(int channels, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

Tensor4 backbone_forward(const Tensor4& crops, const BackboneParams& p);

struct EnhanceRequest {
    GateMode mode = GateMode::hard;
    const BudgetState* budget = nullptr;
    std::optional<Branch> forced;  // bypasses the gate (random or fixed decisions)
    int frame_index = 0;
};

struct Enhanced {
    Tensor4 feature;
    Tensor4 weights;  // (1, B, 1, 1); carries gradient in soft gated mode
    std::array<double, kBranchCount> weight_values{};
    int selected = 0;
    double flops = 0;  // attention FLOPs actually executed for this frame
};

class Model {
   public:
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const BranchCostTable& costs() const { return costs_; }

    /// Handles onto every parameter the configured variant uses, in stable
    /// order. Backbone entries are prefixed "backbone.".
    ParamSet parameters();
    Model clone() const;

    void set_tau(double tau);

    /// (n, 1, crop, crop) -> (n, c, crop/4, crop/4).
    Tensor4 features(const Tensor4& crops) const;
    Enhanced enhance(const Tensor4& feature, const EnhanceRequest& request) const;
    HeadOutput predict(const Tensor4& query_feature, std::span<const Tensor4> memory) const;

   private:
    void visit(const ParamVisitor& fn);

    ModelConfig config_;
    BranchCostTable costs_;
    BackboneParams backbone_;
    BranchSet branches_;
    GateParams gate_;
    ReadoutParams readout_;
    HeadParams head_;
};

bool is_bias_name(const std::string& name);

/// Per-frame tracking cost: two backbone crops (query and memory candidate),
/// readout against memory_frames entries, head, gate, and the expected
/// attention cost under the supplied branch weights.
FlopsReport model_flops(const ModelConfig& config, const std::array<double, kBranchCount>& weights, int memory_frames,
                        int frames);

}  // namespace dastm
