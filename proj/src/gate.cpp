#include "dastm/gate.hpp"

#include <cmath>

#include "dastm/error.hpp"
#include "dastm/ops.hpp"

namespace dastm {

using namespace ops;

const char* branch_name(Branch b) {
    switch (b) {
        case Branch::identity:
            return "identity";
        case Branch::se:
            return "se";
        case Branch::ca:
            return "ca";
        case Branch::cbam:
            return "cbam";
    }
    return "?";
}

const char* mode_name(GateMode m) {
    switch (m) {
        case GateMode::soft:
            return "soft";
        case GateMode::hard:
            return "hard";
        case GateMode::budgeted:
            return "budgeted";
    }
    return "?";
}

BranchSet BranchSet::zeros(int channels, int reduction) {
    return {SEParams::zeros(channels, reduction), CAParams::zeros(channels, reduction),
            CBAMParams::zeros(channels, reduction)};
}

BranchSet BranchSet::random(int channels, int reduction, Rng& rng) {
    BranchSet b;
    b.se = SEParams::random(channels, reduction, rng);
    b.ca = CAParams::random(channels, reduction, rng);
    b.cbam = CBAMParams::random(channels, reduction, rng);
    return b;
}

void BranchSet::visit(const ParamVisitor& fn) {
    se.visit("se", fn);
    ca.visit("ca", fn);
    cbam.visit("cbam", fn);
}

Tensor4 apply_branch(Branch b, const Tensor4& f, const BranchSet& branches) {
    switch (b) {
        case Branch::se:
            return se_forward(f, branches.se);
        case Branch::ca:
            return ca_forward(f, branches.ca);
        case Branch::cbam:
            return cbam_forward(f, branches.cbam);
        case Branch::identity:
        default:
            return f;
    }
}

GateParams GateParams::zeros(int channels, int scale_d, double tau) {
    if (scale_d < 1 || channels % scale_d != 0)
        throw ConfigError("gate channels " + std::to_string(channels) + " not divisible by d=" +
                          std::to_string(scale_d));
    if (!(tau > 0.0)) throw ParameterError("gate temperature must be > 0");
    const int m = channels / scale_d;
    GateParams p;
    p.channels = channels;
    p.scale_d = scale_d;
    p.tau = tau;
    p.w1 = Tensor4({m, channels, 1, 1}, 0.0, true);
    p.b1 = Tensor4({1, m, 1, 1}, 0.0, true);
    p.w2 = Tensor4({kBranchCount, m, 1, 1}, 0.0, true);
    p.b2 = Tensor4({1, kBranchCount, 1, 1}, 0.0, true);
    return p;
}

GateParams GateParams::random(int channels, int scale_d, Rng& rng, double tau) {
    GateParams p = zeros(channels, scale_d, tau);
    const int m = channels / scale_d;
    p.w1 = random_weight({m, channels, 1, 1}, channels, rng);
    p.w2 = random_weight({kBranchCount, m, 1, 1}, m, rng);
    return p;
}

void GateParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
}

Tensor4 gate_logits(const Tensor4& f, const GateParams& p) {
    if (f.shape().c != p.channels)
        throw DimensionError("gate expects " + std::to_string(p.channels) + " channels, got " +
                             std::to_string(f.shape().c));
    const Tensor4 pooled = pool(PoolKind::global_avg, f);
    return linear(relu(linear(pooled, p.w1, p.b1)), p.w2, p.b2);
}

Tensor4 gate_weights(const Tensor4& logits, double tau) { return softmax(logits, Axis::c, tau); }

std::array<double, kBranchCount> gate_weights(const std::array<double, kBranchCount>& logits, double tau) {
    const Tensor4 k = gate_weights(Tensor4({1, kBranchCount, 1, 1}, std::vector<double>(logits.begin(), logits.end())),
                                   tau);
    std::array<double, kBranchCount> out{};
    for (int i = 0; i < kBranchCount; ++i) out[i] = k[i];
    return out;
}

int argmax_first(const std::array<double, kBranchCount>& v) {
    int best = 0;
    for (int i = 1; i < kBranchCount; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::array<double, kBranchCount> budget_filter(const std::array<double, kBranchCount>& weights,
                                               const BranchCostTable& costs, double remaining_budget) {
    if (!(remaining_budget >= 0.0)) throw ParameterError("remaining budget must be >= 0");
    std::array<double, kBranchCount> out{};
    double total = 0.0;
    for (int i = 0; i < kBranchCount; ++i) {
        out[i] = costs.cost[i] > remaining_budget ? 0.0 : weights[i];
        total += out[i];
    }
    if (!(total > 0.0)) {
        out.fill(0.0);
        out[static_cast<int>(Branch::identity)] = 1.0;
        return out;
    }
    for (double& v : out) v /= total;
    return out;
}

Tensor4 dam_combine(const Tensor4& f, const BranchSet& branches, const Tensor4& weights) {
    if (weights.shape() != Shape{1, kBranchCount, 1, 1})
        throw DimensionError("dam weights must be (1,4,1,1), got " + weights.shape().str());
    Tensor4 out;
    bool started = false;
    for (int i = 0; i < kBranchCount; ++i) {
        if (weights[i] == 0.0 && !weights.requires_grad()) continue;
        const Tensor4 term = mul(apply_branch(static_cast<Branch>(i), f, branches), slice(weights, Axis::c, i, 1));
        out = started ? add(out, term) : term;
        started = true;
    }
    if (!started) return scale(f, 0.0);
    return out;
}

DamResult dam_apply(const Tensor4& f, const BranchSet& branches, const GateParams& gate, GateMode mode,
                    const BudgetState* budget, int frame_index) {
    if (f.shape().n != 1) throw DimensionError("dam_apply takes a single frame, got " + f.shape().str());
    if (mode == GateMode::budgeted && budget == nullptr)
        throw ParameterError("budgeted gating requires a budget state");

    const Tensor4 logits = gate_logits(f, gate);
    const Tensor4 weights = gate_weights(logits, gate.tau);

    DamResult r;
    r.decision.mode = mode;
    r.decision.frame_index = frame_index;
    for (int i = 0; i < kBranchCount; ++i) {
        r.decision.logits[i] = logits[i];
        r.decision.weights[i] = weights[i];
    }

    if (mode == GateMode::soft) {
        r.decision.chosen = argmax_first(r.decision.weights);
        r.feature = dam_combine(f, branches, weights);
        r.weights = weights;
        return r;
    }

    std::array<double, kBranchCount> k = r.decision.weights;
    if (mode == GateMode::budgeted) k = budget_filter(k, budget->costs, budget->remaining);
    const int chosen = argmax_first(k);
    r.decision.weights.fill(0.0);
    r.decision.weights[chosen] = 1.0;
    r.decision.chosen = chosen;
    r.feature = apply_branch(static_cast<Branch>(chosen), f, branches);
    r.weights = Tensor4({1, kBranchCount, 1, 1}, std::vector<double>(r.decision.weights.begin(), r.decision.weights.end()));
    return r;
}

DamResult dam_apply_fixed(const Tensor4& f, const BranchSet& branches, Branch branch, int frame_index) {
    DamResult r;
    r.decision.mode = GateMode::hard;
    r.decision.frame_index = frame_index;
    r.decision.weights[static_cast<int>(branch)] = 1.0;
    r.decision.chosen = static_cast<int>(branch);
    r.feature = apply_branch(branch, f, branches);
    r.weights = Tensor4({1, kBranchCount, 1, 1}, std::vector<double>(r.decision.weights.begin(), r.decision.weights.end()));
    return r;
}

Tensor4 static_combination(const Tensor4& f, const BranchSet& branches, const std::vector<Branch>& active) {
    if (active.empty()) return f;
    if (active.size() == 1) return apply_branch(active[0], f, branches);
    Tensor4 out = apply_branch(active[0], f, branches);
    for (std::size_t i = 1; i < active.size(); ++i) out = add(out, apply_branch(active[i], f, branches));
    return scale(out, 1.0 / static_cast<double>(active.size()));
}

}  // namespace dastm
