#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/metrics.hpp"
#include "dastm/rng.hpp"

using namespace dastm;

namespace {

// Box with a prescribed IoU against the unit-anchored gt (same height, shifted in x).
BBox shifted_box(const BBox& gt, double target_iou) {
    // Overlap fraction f of width: IoU = f / (2 - f).
    const double f = 2.0 * target_iou / (1.0 + target_iou);
    return {gt.x + (1.0 - f) * gt.w, gt.y, gt.w, gt.h};
}

TrackResult random_result(Rng& rng, int frames) {
    TrackResult r;
    for (int i = 0; i < frames; ++i) {
        const BBox g{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(5, 30), rng.uniform(5, 30)};
        r.gt.push_back(g);
        r.pred.push_back({g.x + rng.uniform(-15, 15), g.y + rng.uniform(-15, 15), g.w * rng.uniform(0.5, 1.5),
                          g.h * rng.uniform(0.5, 1.5)});
    }
    return r;
}

}  // namespace

TEST_CASE("iou fixtures") {
    CHECK(iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
    CHECK(iou({0, 0, 2, 2}, {5, 5, 2, 2}) == 0.0);
    CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
    CHECK(std::abs(iou(shifted_box({0, 0, 10, 10}, 0.3), {0, 0, 10, 10}) - 0.3) < 1e-12);
}

TEST_CASE("otb success and precision") {
    TrackResult perfect{{{0, 0, 4, 4}, {1, 1, 4, 4}}, {{0, 0, 4, 4}, {1, 1, 4, 4}}};
    const OtbScores s = otb_success_precision(perfect);
    CHECK(s.thresholds.size() == 101);
    CHECK(s.success_auc == doctest::Approx(100.0 / 101.0).epsilon(1e-15));
    for (int k = 0; k < 100; ++k) CHECK(s.success[k] == 1.0);
    CHECK(s.success[100] == 0.0);
    CHECK(s.precision == 1.0);
    CHECK_THROWS_AS(otb_success_precision(TrackResult{}), ParameterError);

    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const OtbScores r = otb_success_precision(random_result(rng, 30));
        for (int k = 1; k < 101; ++k) CHECK(r.success[k] <= r.success[k - 1]);
    }
}

TEST_CASE("success AUC tracks mean IoU on dense draws") {
    Rng rng(1000);
    const BBox gt{10, 10, 20, 20};
    double worst = 0.0;
    for (int draw = 0; draw < 1000; ++draw) {
        TrackResult r;
        double mean = 0.0;
        for (int f = 0; f < 20; ++f) {
            const double u = rng.uniform();
            r.gt.push_back(gt);
            r.pred.push_back(shifted_box(gt, u));
            mean += iou(r.pred.back(), gt) / 20.0;
        }
        worst = std::max(worst, std::abs(otb_success_precision(r).success_auc - mean));
    }
    CHECK(worst < 0.01);
}

TEST_CASE("normalized precision") {
    const BBox g{0, 0, 10, 20};
    TrackResult half{{{5, 0, 10, 20}}, {g}};
    CHECK(normalized_precision(half) == 0.0);
    TrackResult exact{{g}, {g}};
    CHECK(normalized_precision(exact) == doctest::Approx(50.0 / 51.0).epsilon(1e-15));

    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const TrackResult r = random_result(rng, 3 + trial);
        double area = 0.0;
        for (int k = 0; k <= 50; ++k) {
            const double theta = k * 0.01;
            int hits = 0;
            for (std::size_t i = 0; i < r.gt.size(); ++i) {
                const double dx = (r.pred[i].x + r.pred[i].w / 2 - r.gt[i].x - r.gt[i].w / 2) / r.gt[i].w;
                const double dy = (r.pred[i].y + r.pred[i].h / 2 - r.gt[i].y - r.gt[i].h / 2) / r.gt[i].h;
                hits += std::sqrt(dx * dx + dy * dy) < theta;
            }
            area += static_cast<double>(hits) / r.gt.size();
        }
        CHECK(std::abs(normalized_precision(r) - area / 51.0) <= 1e-12);
    }
    CHECK_THROWS_AS(normalized_precision(TrackResult{{{0, 0, 1, 1}}, {{0, 0, 0, 0}}}), ParameterError);
}

TEST_CASE("got10k AO and SR") {
    const BBox g{0, 0, 10, 10};
    TrackResult two{{shifted_box(g, 0.6), shifted_box(g, 0.8)}, {g, g}};
    const Got10kScores s = got10k_ao_sr({two});
    CHECK(s.ao == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(s.sr50 == 1.0);
    CHECK(s.sr75 == 0.5);
    const Got10kScores p = got10k_ao_sr({TrackResult{{g}, {g}}});
    CHECK(p.ao == 1.0);
    CHECK(p.sr50 == 1.0);
    CHECK(p.sr75 == 1.0);
    CHECK_THROWS_AS(got10k_ao_sr({}), ParameterError);

    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<TrackResult> rs;
        double ao = 0, s50 = 0, s75 = 0;
        const int seqs = 1 + trial % 4;
        for (int q = 0; q < seqs; ++q) {
            rs.push_back(random_result(rng, 5 + q));
            double a = 0, b = 0, c = 0;
            for (std::size_t i = 0; i < rs.back().gt.size(); ++i) {
                const double v = iou(rs.back().pred[i], rs.back().gt[i]);
                a += v;
                b += v > 0.5;
                c += v > 0.75;
            }
            const double n = static_cast<double>(rs.back().gt.size());
            ao += a / n / seqs;
            s50 += b / n / seqs;
            s75 += c / n / seqs;
        }
        const Got10kScores got = got10k_ao_sr(rs);
        CHECK(std::abs(got.ao - ao) <= 1e-12);
        CHECK(std::abs(got.sr50 - s50) <= 1e-12);
        CHECK(std::abs(got.sr75 - s75) <= 1e-12);
        CHECK(got.sr75 <= got.sr50);
        std::reverse(rs.begin(), rs.end());
        CHECK(std::abs(got10k_ao_sr(rs).ao - got.ao) <= 1e-12);
    }
}

TEST_CASE("simplified VOT protocol") {
    const VotScores v = vot_accuracy_robustness(std::vector<double>{1, 0, 1, 1, 1, 1, 1, 1}, 5);
    CHECK(v.failures == 1);
    CHECK(v.accuracy == 1.0);
    const VotScores mixed = vot_accuracy_robustness(std::vector<double>{0.5, 0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.7}, 5);
    CHECK(mixed.accuracy == doctest::Approx(0.6));
    const VotScores alt = vot_accuracy_robustness(std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1, 0}, 1);
    CHECK(alt.failures == 5);
    CHECK(alt.accuracy == 0.0);
    const BBox g{0, 0, 4, 4};
    const VotScores perfect = vot_accuracy_robustness(TrackResult{{g, g}, {g, g}});
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.failures == 0);
}

TEST_CASE("gate trace statistics") {
    GateTrace t;
    for (int i = 0; i < 4; ++i) t.push_back({i, "stable", {0.25, 0.25, 0.25, 0.25}, 1, 10.0});
    t.push_back({4, "fast", {0.3, 0.7, 0, 0}, 3, 30.0});
    t.push_back({5, "fast", {0.7, 0.3, 0, 0}, 0, 0.0});
    const GateTraceStats s = gate_trace_stats(t);
    CHECK(s.per_phase.at("stable").mean[0] == 0.25);
    CHECK(s.per_phase.at("stable").std[2] == 0.0);
    CHECK(s.per_phase.at("fast").mean[0] == doctest::Approx(0.5));
    CHECK(s.per_phase.at("fast").std[0] == doctest::Approx(0.2));
    CHECK(s.activation_rate == doctest::Approx(1.0 / 6.0));
    CHECK(s.mean_flops == doctest::Approx(70.0 / 6.0));
    CHECK_THROWS_AS(gate_trace_stats({}), ParameterError);

    Rng rng(31);
    GateTrace r;
    for (int i = 0; i < 40; ++i) {
        std::array<double, 4> w{};
        double tot = 0;
        for (double& v : w) tot += (v = rng.uniform());
        for (double& v : w) v /= tot;
        r.push_back({i, i % 3 == 0 ? "occlusion" : "stable", w, static_cast<int>(rng.below(4)), rng.uniform(0, 100)});
    }
    const GateTraceStats rs = gate_trace_stats(r);
    for (const auto& [phase, b] : rs.per_phase) {
        for (int k = 0; k < 4; ++k) {
            double m = 0, n = 0;
            for (const auto& row : r)
                if (row.phase == phase) {
                    m += row.weights[k];
                    n += 1;
                }
            m /= n;
            double var = 0;
            for (const auto& row : r)
                if (row.phase == phase) var += (row.weights[k] - m) * (row.weights[k] - m);
            CHECK(std::abs(b.mean[k] - m) <= 1e-12);
            CHECK(std::abs(b.std[k] - std::sqrt(var / n)) <= 1e-12);
        }
    }
}

TEST_CASE("layer flop counts") {
    CHECK(flops_layer(LayerKind::conv, {1, 32, 32, 16, 16, 0}) == 524288.0);
    CHECK(flops_layer(LayerKind::linear, {1, 32, 8, 0, 0, 0}) == 512.0);
    CHECK(flops_layer(LayerKind::elementwise, {1, 0, 0, 0, 0, 32.0 * 16 * 16}) == 8192.0);
    CHECK(flops_layer(LayerKind::pool, {1, 0, 0, 0, 0, 100.0}) == 100.0);
    CHECK_THROWS_AS(conv_flops(0, 1, 1, 1, 1), ConfigError);
}

TEST_CASE("branch costs") {
    const AttentionShape s{32, 4, 16, 16};
    const BranchCostTable t = branch_costs(s);
    CHECK(t[Branch::identity] == 0.0);
    CHECK(t[Branch::cbam] > t[Branch::ca]);
    CHECK(t[Branch::ca] > t[Branch::se]);
    CHECK(t[Branch::se] > 0.0);

    // SE layer by layer: pool, FC 32->8, relu, FC 8->32, sigmoid, rescale.
    const double chw = 32.0 * 16 * 16;
    CHECK(t[Branch::se] == chw + 2 * 32 * 8 + 8 + 2 * 8 * 32 + 32 + chw);

    // Doubling spatial dims: CBAM's spatial conv term scales by 4.
    const AttentionShape big{32, 4, 32, 32};
    const double conv_small = conv_flops(7, 2, 1, 16, 16), conv_big = conv_flops(7, 2, 1, 32, 32);
    CHECK(conv_big == 4 * conv_small);
    const double rest_small = cbam_flops(s) - conv_small, rest_big = cbam_flops(big) - conv_big;
    CHECK(rest_big > rest_small);

    CHECK(expected_cost({0, 0, 0, 1}, t) == t[Branch::cbam]);
    CHECK(expected_cost({0.25, 0.25, 0.25, 0.25}, t) == doctest::Approx(t.attention_total() / 4));
    CHECK_THROWS_AS(branch_costs({30, 4, 16, 16}), ConfigError);
}

TEST_CASE("reduction versus parallel stacking") {
    const BranchCostTable t = branch_costs({32, 4, 16, 16});
    const double total = t[Branch::se] + t[Branch::ca] + t[Branch::cbam];
    CHECK(reduction_vs_parallel({3, 3, 3}, t) == 1.0 - t[Branch::cbam] / total);
    CHECK(reduction_vs_parallel({0, 0}, t) == 1.0);
    const double want = 1.0 - ((t[Branch::se] + t[Branch::ca] + t[Branch::cbam] + 0.0) / 4.0) / total;
    CHECK(std::abs(reduction_vs_parallel({1, 2, 3, 0}, t) - want) <= 1e-12);
    const double g = 123.0;
    CHECK(std::abs(reduction_vs_parallel({1, 2, 3, 0}, t, g) - (want - g / total)) <= 1e-12);
    CHECK_THROWS_AS(reduction_vs_parallel({}, t), ParameterError);
    CHECK_THROWS_AS(reduction_vs_parallel({1}, BranchCostTable{}), ParameterError);
}
