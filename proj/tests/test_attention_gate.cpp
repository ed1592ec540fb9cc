#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dastm/attention.hpp"
#include "dastm/autograd.hpp"
#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/gate.hpp"
#include "dastm/ops.hpp"
#include "helpers.hpp"

using namespace dastm;
using dastm::test::random_tensor;

namespace {

double entropy(const std::array<double, kBranchCount>& k) {
    double h = 0.0;
    for (double v : k)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double max_rel(const Tensor4& out, const Tensor4& x, double factor) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) m = std::max(m, std::abs(out[i] - factor * x[i]));
    return m;
}

// Independent evaluation of the gating unit with plain loops.
std::array<double, kBranchCount> logits_oracle(const Tensor4& f, const GateParams& p) {
    const Shape s = f.shape();
    std::vector<double> avg(s.c, 0.0);
    for (int c = 0; c < s.c; ++c) {
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) avg[c] += f.at(0, c, i, j);
        avg[c] /= s.h * s.w;
    }
    const int m = p.w1.shape().n;
    std::vector<double> hidden(m);
    for (int r = 0; r < m; ++r) {
        double v = p.b1[r];
        for (int c = 0; c < s.c; ++c) v += p.w1.at(r, c, 0, 0) * avg[c];
        hidden[r] = std::max(0.0, v);
    }
    std::array<double, kBranchCount> out{};
    for (int b = 0; b < kBranchCount; ++b) {
        double v = p.b2[b];
        for (int r = 0; r < m; ++r) v += p.w2.at(b, r, 0, 0) * hidden[r];
        out[b] = v;
    }
    return out;
}

}  // namespace

TEST_CASE("zero-parameter branches have closed forms") {
    Rng rng(9);
    const Tensor4 x = random_tensor({1, 8, 5, 6}, rng);
    const BranchSet zero = BranchSet::zeros(8, 2);
    CHECK(max_rel(se_forward(x, zero.se), x, 0.5) <= 1e-12);
    CHECK(max_rel(ca_forward(x, zero.ca), x, 0.25) <= 1e-12);
    CHECK(max_rel(cbam_forward(x, zero.cbam), x, 0.25) <= 1e-12);

    const Tensor4 small({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor4 ca = ca_forward(small, CAParams::zeros(1, 1));
    CHECK(ca.values() == std::vector<double>{0.25, 0.5, 0.75, 1.0});

    const Tensor4 uniform({1, kBranchCount, 1, 1}, 0.25);
    CHECK(max_rel(dam_combine(x, zero, uniform), x, 0.5) <= 1e-12);
    const DamResult r = dam_apply(x, zero, GateParams::zeros(8, 2), GateMode::soft);
    CHECK(max_rel(r.feature, x, 0.5) <= 1e-12);
}

TEST_CASE("SE crafted logits give the expected channel scales") {
    SEParams p = SEParams::zeros(2, 1);
    p.b2 = Tensor4({1, 2, 1, 1}, {std::log(3.0), 0.0}, true);
    const Tensor4 x({1, 2, 1, 2}, {1, 1, 2, 2});
    const Tensor4 y = se_forward(x, p);
    CHECK(y[0] == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(y[2] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("branches preserve shape and shrink magnitudes") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const BranchSet b = BranchSet::random(8, 4, rng);
        const Tensor4 x = random_tensor({1, 8, 4 + trial % 3, 5}, rng, false, 3.0);
        for (const Tensor4& y : {se_forward(x, b.se), ca_forward(x, b.ca), cbam_forward(x, b.cbam)}) {
            CHECK(y.shape() == x.shape());
            for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
        }
        CHECK(se_forward(Tensor4(x.shape(), 0.0), b.se).values() == std::vector<double>(x.numel(), 0.0));
        CHECK(cbam_forward(Tensor4(x.shape(), 0.0), b.cbam).values() == std::vector<double>(x.numel(), 0.0));
    }
}

TEST_CASE("SE commutes with spatial permutations") {
    Rng rng(4);
    const SEParams p = SEParams::random(4, 2, rng);
    const Tensor4 x = random_tensor({1, 4, 3, 3}, rng);
    const Tensor4 xt = ops::transpose_hw(x);
    CHECK(test::max_abs_diff(ops::transpose_hw(se_forward(x, p)), se_forward(xt, p)) < 1e-12);
}

TEST_CASE("gate logits follow the pooled two-layer map") {
    const GateParams zero = GateParams::zeros(8, 2);
    Rng rng(12);
    const Tensor4 f = random_tensor({1, 8, 4, 4}, rng);
    const Tensor4 s = gate_logits(f, zero);
    CHECK(s.values() == std::vector<double>(kBranchCount, 0.0));

    GateParams bias = GateParams::zeros(8, 2);
    bias.b2 = Tensor4({1, 4, 1, 1}, {1, 0, 0, 0}, true);
    CHECK(gate_logits(Tensor4({1, 8, 4, 4}, 0.0), bias).values() == std::vector<double>{1, 0, 0, 0});

    for (int trial = 0; trial < 10; ++trial) {
        const GateParams p = GateParams::random(8, 2, rng);
        const Tensor4 x = random_tensor({1, 8, 3, 5}, rng, false, 2.0);
        const Tensor4 got = gate_logits(x, p);
        const auto want = logits_oracle(x, p);
        for (int b = 0; b < kBranchCount; ++b) CHECK(std::abs(got[b] - want[b]) <= 1e-12);
    }
}

TEST_CASE("gate weight law") {
    CHECK(gate_weights({0, 0, 0, 0}, 1.0) == std::array<double, 4>{0.25, 0.25, 0.25, 0.25});
    const auto hot = gate_weights({1, 2, 0, 0}, 1e6);
    for (double v : hot) CHECK(std::abs(v - 0.25) < 1e-6);
    CHECK_THROWS_AS(gate_weights({0, 0, 0, 0}, 0.0), ParameterError);
    CHECK_THROWS_AS(gate_weights({0, 0, 0, 0}, -1.0), ParameterError);

    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 4> s{};
        for (double& v : s) v = rng.uniform(-3.0, 3.0);
        double prev = -1.0;
        for (double tau : {0.05, 0.1, 0.3, 1.0, 2.0, 5.0, 20.0}) {
            const auto k = gate_weights(s, tau);
            double total = 0.0;
            for (double v : k) {
                CHECK(v > 0.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
            CHECK(argmax_first(k) == argmax_first(s));
            std::array<double, 4> shifted = s;
            for (double& v : shifted) v += 17.25;
            CHECK(argmax_first(gate_weights(shifted, tau)) == argmax_first(k));
            const double h = entropy(k);
            CHECK(h >= prev - 1e-12);
            prev = h;
        }
        const auto cold = gate_weights(s, 1e-6);
        for (int b = 0; b < kBranchCount; ++b) CHECK(std::abs(cold[b] - (b == argmax_first(s) ? 1.0 : 0.0)) <= 1e-9);
    }
}

TEST_CASE("budget filter") {
    const std::array<double, 4> k{0.1, 0.2, 0.3, 0.4};
    const BranchCostTable costs{{0, 1, 2, 4}};
    const auto f = budget_filter(k, costs, 2.0);
    CHECK(f[0] == doctest::Approx(0.1 / 0.6).epsilon(1e-14));
    CHECK(f[1] == doctest::Approx(0.2 / 0.6).epsilon(1e-14));
    CHECK(f[2] == doctest::Approx(0.3 / 0.6).epsilon(1e-14));
    CHECK(f[3] == 0.0);
    CHECK(budget_filter(k, costs, 4.0) == k);
    CHECK(budget_filter(k, costs, 0.0) == std::array<double, 4>{1, 0, 0, 0});
    CHECK(budget_filter({0, 0, 0, 1}, costs, 3.0) == std::array<double, 4>{1, 0, 0, 0});
    CHECK_THROWS_AS(budget_filter(k, costs, -1.0), ParameterError);
}

TEST_CASE("dam modes agree") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const BranchSet b = BranchSet::random(8, 4, rng);
        const GateParams g = GateParams::random(8, 2, rng);
        const Tensor4 f = random_tensor({1, 8, 4, 4}, rng);

        CHECK(dam_apply_fixed(f, b, Branch::identity).feature.values() == f.values());
        for (int j = 0; j < kBranchCount; ++j) {
            std::vector<double> onehot(kBranchCount, 0.0);
            onehot[j] = 1.0;
            const Tensor4 soft = dam_combine(f, b, Tensor4({1, 4, 1, 1}, onehot));
            const Tensor4 hard = dam_apply_fixed(f, b, static_cast<Branch>(j)).feature;
            CHECK(soft.values() == hard.values());
        }

        const DamResult hard = dam_apply(f, b, g, GateMode::hard);
        int ones = 0;
        for (double v : hard.decision.weights) ones += v == 1.0;
        CHECK(ones == 1);
        CHECK(hard.decision.chosen.value() == argmax_first(hard.decision.logits));

        GateParams cold = g;
        cold.tau = 1e-6;
        const DamResult soft = dam_apply(f, b, cold, GateMode::soft);
        const DamResult hard_cold = dam_apply(f, b, cold, GateMode::hard);
        // The cold-softmax limit only holds away from exact logit ties.
        std::array<double, kBranchCount> sorted = soft.decision.logits;
        std::sort(sorted.begin(), sorted.end());
        if (sorted[3] - sorted[2] > 1e-4) CHECK(test::max_abs_diff(soft.feature, hard_cold.feature) < 1e-6);

        const BudgetState zero{branch_costs({8, 4, 4, 4}), 0.0};
        const DamResult starved = dam_apply(f, b, g, GateMode::budgeted, &zero, 3);
        CHECK(starved.decision.chosen.value() == 0);
        CHECK(starved.feature.values() == f.values());
        CHECK(starved.decision.frame_index == 3);
        CHECK_THROWS_AS(dam_apply(f, b, g, GateMode::budgeted), ParameterError);
    }
}

TEST_CASE("branches and gate pass grad checks") {
    Rng rng(64);
    for (int trial = 0; trial < 3; ++trial) {
        BranchSet b = BranchSet::random(4, 2, rng);
        GateParams g = GateParams::random(4, 2, rng);
        ParamSet ps;
        ps.add("f", random_tensor({1, 4, 3, 4}, rng, true));
        b.visit([&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        g.visit("gate", [&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        const Tensor4 w = random_tensor({1, 4, 3, 4}, rng);
        const Tensor4& f = ps.get("f");
        auto obj = [&](const Tensor4& y) { return ops::sum(ops::mul(y, w)); };
        CHECK(grad_check([&] { return obj(se_forward(f, b.se)); }, ps, 1e-5) < 1e-4);
        CHECK(grad_check([&] { return obj(ca_forward(f, b.ca)); }, ps, 1e-5) < 1e-4);
        CHECK(grad_check([&] { return obj(cbam_forward(f, b.cbam)); }, ps, 1e-5) < 1e-4);
        CHECK(grad_check([&] { return obj(dam_apply(f, b, g, GateMode::soft).feature); }, ps, 1e-5) < 1e-4);
    }
}
