#include "dastm/model.hpp"

#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/ops.hpp"

namespace dastm {

using namespace ops;

namespace {

constexpr std::array<const char*, 7> kEnhancementNames = {"none", "se", "ca", "cbam", "se_ca", "se_ca_cbam", "gated"};

Tensor4 bias_zeros(int n) { return Tensor4({1, n, 1, 1}, 0.0, true); }

}  // namespace

const char* enhancement_name(Enhancement e) { return kEnhancementNames[static_cast<int>(e)]; }

Enhancement parse_enhancement(const std::string& s) {
    for (std::size_t i = 0; i < kEnhancementNames.size(); ++i)
        if (s == kEnhancementNames[i]) return static_cast<Enhancement>(i);
    throw ConfigError("unknown enhancement '" + s + "'");
}

std::vector<Branch> static_branches(Enhancement e) {
    switch (e) {
        case Enhancement::none: return {};
        case Enhancement::se: return {Branch::se};
        case Enhancement::ca: return {Branch::ca};
        case Enhancement::cbam: return {Branch::cbam};
        case Enhancement::se_ca: return {Branch::se, Branch::ca};
        case Enhancement::se_ca_cbam: return {Branch::se, Branch::ca, Branch::cbam};
        case Enhancement::gated: break;
    }
    throw ConfigError("gated enhancement has no static branch list");
}

void ModelConfig::validate() const {
    if (channels < 1 || reduction < 1 || channels % reduction != 0)
        throw ConfigError("channels must be a positive multiple of reduction");
    if (gate_d < 1 || channels % gate_d != 0) throw ConfigError("channels must be a positive multiple of gate_d");
    if (key_dim < 1 || value_dim < 1 || head_hidden < 1) throw ConfigError("key_dim, value_dim, head_hidden must be >= 1");
    if (crop < kFeatureStride || crop % kFeatureStride != 0) throw ConfigError("crop must be a positive multiple of 4");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
}

BackboneParams BackboneParams::random(int channels, Rng& rng) {
    BackboneParams p;
    p.conv1_w = random_weight({16, 1, 4, 4}, 16, rng);
    p.conv1_b = bias_zeros(16);
    p.conv2_w = random_weight({channels, 16, 4, 4}, 16 * 16, rng);
    p.conv2_b = bias_zeros(channels);
    p.conv3_w = random_weight({channels, channels, 3, 3}, channels * 9, rng);
    p.conv3_b = bias_zeros(channels);
    return p;
}

void BackboneParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".conv1.w", conv1_w);
    fn(prefix + ".conv1.b", conv1_b);
    fn(prefix + ".conv2.w", conv2_w);
    fn(prefix + ".conv2.b", conv2_b);
    fn(prefix + ".conv3.w", conv3_w);
    fn(prefix + ".conv3.b", conv3_b);
}

Tensor4 backbone_forward(const Tensor4& crops, const BackboneParams& p) {
    Tensor4 x = relu(conv2d(crops, p.conv1_w, p.conv1_b, 2, 1));
    x = relu(conv2d(x, p.conv2_w, p.conv2_b, 2, 1));
    return relu(conv2d(x, p.conv3_w, p.conv3_b, 1, 1));
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int c = config_.channels;
    backbone_ = BackboneParams::random(c, rng);
    branches_ = BranchSet::random(c, config_.reduction, rng);
    gate_ = GateParams::random(c, config_.gate_d, rng, config_.tau);
    readout_ = ReadoutParams::random(c, config_.key_dim, config_.value_dim, rng);
    head_ = HeadParams::random(c, config_.head_hidden, rng);
    costs_ = branch_costs({c, config_.reduction, config_.feature_size(), config_.feature_size()});
}

void Model::visit(const ParamVisitor& fn) {
    backbone_.visit("backbone", fn);
    const Enhancement e = config_.enhancement;
    const bool gated = e == Enhancement::gated;
    auto uses = [&](Branch b) {
        if (gated) return true;
        for (Branch s : static_branches(e))
            if (s == b) return true;
        return false;
    };
    if (uses(Branch::se)) branches_.se.visit("se", fn);
    if (uses(Branch::ca)) branches_.ca.visit("ca", fn);
    if (uses(Branch::cbam)) branches_.cbam.visit("cbam", fn);
    if (gated) gate_.visit("gate", fn);
    readout_.visit("readout", fn);
    head_.visit("head", fn);
}

ParamSet Model::parameters() {
    ParamSet set;
    visit([&](const std::string& name, Tensor4& t) { set.add(name, t); });
    return set;
}

Model Model::clone() const {
    Model copy = *this;
    copy.visit([](const std::string&, Tensor4& t) { t = t.clone(); });
    return copy;
}

void Model::set_tau(double tau) {
    if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
    gate_.tau = tau;
}

Tensor4 Model::features(const Tensor4& crops) const {
    const Shape& s = crops.shape();
    if (s.c != 1 || s.h != config_.crop || s.w != config_.crop)
        throw DimensionError("crops must be (n,1," + std::to_string(config_.crop) + "," + std::to_string(config_.crop) +
                             "), got " + s.str());
    return backbone_forward(crops, backbone_);
}

Enhanced Model::enhance(const Tensor4& feature, const EnhanceRequest& request) const {
    Enhanced out;
    if (config_.enhancement != Enhancement::gated) {
        const std::vector<Branch> active = static_branches(config_.enhancement);
        out.feature = static_combination(feature, branches_, active);
        if (active.empty()) {
            out.weight_values[0] = 1.0;
        } else {
            for (Branch b : active) {
                out.weight_values[static_cast<int>(b)] = 1.0 / static_cast<double>(active.size());
                out.flops += costs_[b];
            }
            out.selected = static_cast<int>(active.back());
        }
        return out;
    }

    DamResult r = request.forced ? dam_apply_fixed(feature, branches_, *request.forced, request.frame_index)
                                 : dam_apply(feature, branches_, gate_, request.mode, request.budget, request.frame_index);
    out.feature = r.feature;
    out.weights = r.weights;
    out.weight_values = r.decision.weights;
    out.selected = r.decision.chosen.value_or(0);
    if (r.decision.mode == GateMode::soft && !request.forced) {
        // Every branch runs in a soft mixture.
        for (int i = 0; i < kBranchCount; ++i)
            if (out.weight_values[i] != 0.0) out.flops += costs_.cost[i];
    } else {
        out.flops = costs_.cost[out.selected];
    }
    return out;
}

HeadOutput Model::predict(const Tensor4& query_feature, std::span<const Tensor4> memory) const {
    return head_forward(readout(query_feature, memory, readout_), head_);
}

FlopsReport model_flops(const ModelConfig& config, const std::array<double, kBranchCount>& weights, int memory_frames,
                        int frames) {
    config.validate();
    if (memory_frames < 1 || frames < 0) throw ParameterError("need memory_frames >= 1 and frames >= 0");
    const int c = config.channels, fs = config.feature_size(), half = config.crop / 2;
    const double hw = static_cast<double>(fs) * fs;
    const double pixels = hw * memory_frames;
    const int ck = config.key_dim, cv = config.value_dim, hid = config.head_hidden;

    const double backbone = conv_flops(4, 1, 16, half, half) + elementwise_flops(16.0 * half * half) +
                            conv_flops(4, 16, c, fs, fs) + elementwise_flops(c * hw) + conv_flops(3, c, c, fs, fs) +
                            elementwise_flops(c * hw);
    const double projections = conv_flops(1, c, ck, fs, fs) + memory_frames * conv_flops(1, c, ck + cv, fs, fs);
    const double attention = 2.0 * hw * pixels * ck + 3.0 * hw * pixels + 2.0 * hw * pixels * cv;
    const double fusion = conv_flops(1, cv + c, c, fs, fs) + elementwise_flops(c * hw);
    auto head_branch = [&](int outputs) {
        return conv_flops(3, c, hid, fs, fs) + conv_flops(3, hid, hid, fs, fs) + 2 * elementwise_flops(hid * hw) +
               conv_flops(1, hid, outputs, fs, fs);
    };
    const double head = head_branch(1) + head_branch(1) + head_branch(4) + elementwise_flops(4 * hw);

    FlopsReport r;
    r.per_frame = {{"backbone x2 crops", 2 * backbone},
                   {"readout projections", projections},
                   {"readout attention", attention},
                   {"readout fusion", fusion},
                   {"head", head}};
    const AttentionShape shape{c, config.reduction, fs, fs};
    r.branches = branch_costs(shape);
    r.gate = config.enhancement == Enhancement::gated ? gate_flops(shape, config.gate_d) : 0.0;
    r.expected_attention = expected_cost(weights, r.branches);
    r.per_frame_total = r.gate + r.expected_attention;
    for (const FlopsLine& l : r.per_frame) r.per_frame_total += l.flops;
    r.cumulative = r.per_frame_total * frames;
    return r;
}

bool is_bias_name(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string last = dot == std::string::npos ? name : name.substr(dot + 1);
    if (last.empty() || last[0] != 'b') return false;
    for (std::size_t i = 1; i < last.size(); ++i)
        if (last[i] < '0' || last[i] > '9') return false;
    return true;
}

}  // namespace dastm
