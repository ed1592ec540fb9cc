#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dastm/attention.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

// Decision space of the gate: a zero-cost identity option plus the three
// attention branches.
enum class Branch : int { identity = 0, se = 1, ca = 2, cbam = 3 };
inline constexpr int kBranchCount = 4;
const char* branch_name(Branch b);

struct BranchSet {
    SEParams se;
    CAParams ca;
    CBAMParams cbam;

    static BranchSet zeros(int channels, int reduction);
    static BranchSet random(int channels, int reduction, Rng& rng);
    void visit(const ParamVisitor& fn);
};

Tensor4 apply_branch(Branch b, const Tensor4& f, const BranchSet& branches);

/// Gating unit: global average pool, FC(c -> c/d), ReLU, FC(c/d -> B), then a
/// temperature softmax over the B logits.
struct GateParams {
    int channels = 0;
    int scale_d = 1;
    double tau = 1.0;
    Tensor4 w1, b1;  // (c/d, c, 1, 1), (1, c/d, 1, 1)
    Tensor4 w2, b2;  // (B, c/d, 1, 1), (1, B, 1, 1)

    static GateParams zeros(int channels, int scale_d, double tau = 1.0);
    static GateParams random(int channels, int scale_d, Rng& rng, double tau = 1.0);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

enum class GateMode { soft, hard, budgeted };
const char* mode_name(GateMode m);

struct GateDecision {
    std::array<double, kBranchCount> logits{};
    std::array<double, kBranchCount> weights{};
    GateMode mode = GateMode::soft;
    std::optional<int> chosen;
    int frame_index = 0;
};

// FLOPs of each branch for one feature shape, indexed by Branch.
struct BranchCostTable {
    std::array<double, kBranchCount> cost{};

    double operator[](Branch b) const { return cost[static_cast<int>(b)]; }
    double attention_total() const { return cost[1] + cost[2] + cost[3]; }
};

struct BudgetState {
    BranchCostTable costs;
    double remaining = 0.0;
};

/// (n, B, 1, 1) logits S per sample.
Tensor4 gate_logits(const Tensor4& f, const GateParams& p);
/// K = softmax(S / tau) along the branch axis. Throws ParameterError for tau <= 0.
Tensor4 gate_weights(const Tensor4& logits, double tau);
std::array<double, kBranchCount> gate_weights(const std::array<double, kBranchCount>& logits, double tau);

/// Masks branches whose cost exceeds the budget and renormalizes. Falls back
/// to one-hot identity when nothing with positive weight survives.
std::array<double, kBranchCount> budget_filter(const std::array<double, kBranchCount>& weights,
                                               const BranchCostTable& costs, double remaining_budget);

/// Weighted sum of branch outputs; zero-weight branches are not evaluated.
/// weights is (1, B, 1, 1) and may carry gradient.
Tensor4 dam_combine(const Tensor4& f, const BranchSet& branches, const Tensor4& weights);

struct DamResult {
    Tensor4 feature;
    Tensor4 weights;  // (1, B, 1, 1); differentiable in soft mode
    GateDecision decision;
};

/// Dynamic attention block on a single memory-frame feature (n = 1).
/// soft: output = sum_i K_i branch_i(f). hard: output = branch_argmax(f).
/// budgeted: budget_filter then hard selection (requires budget).
DamResult dam_apply(const Tensor4& f, const BranchSet& branches, const GateParams& gate, GateMode mode,
                    const BudgetState* budget = nullptr, int frame_index = 0);

/// Applies a decision made outside the gate (forced or random one-hot).
DamResult dam_apply_fixed(const Tensor4& f, const BranchSet& branches, Branch branch, int frame_index = 0);

/// Fixed equal-weight average of the selected branches (static stacking);
/// an empty selection is the identity.
Tensor4 static_combination(const Tensor4& f, const BranchSet& branches, const std::vector<Branch>& active);

int argmax_first(const std::array<double, kBranchCount>& v);

}  // namespace dastm
