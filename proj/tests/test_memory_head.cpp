#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dastm/autograd.hpp"
#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/head.hpp"
#include "dastm/memory.hpp"
#include "dastm/model.hpp"
#include "dastm/ops.hpp"
#include "helpers.hpp"

using namespace dastm;
using dastm::test::random_tensor;

TEST_CASE("memory bank write policy") {
    MemoryBank bank;
    const Tensor4 f({1, 2, 2, 2}, 1.0);
    bank.update(0, f, 0.0);
    CHECK(bank.size() == 1);
    bank.update(3, f, 0.9);
    CHECK(bank.size() == 1);  // not on the write period
    bank.update(10, f, 0.5);
    CHECK(bank.size() == 1);  // below threshold
    bank.update(15, f, 0.6);
    bank.update(20, f, 0.9);
    CHECK(bank.size() == 3);
    bank.update(25, f, 0.9);
    CHECK(bank.size() == 3);
    std::vector<int> idx;
    for (const auto& e : bank.entries()) idx.push_back(e.frame_index);
    CHECK(idx == std::vector<int>{0, 20, 25});
    CHECK_THROWS_AS(bank.update(25, f, 1.0), ParameterError);
    CHECK_THROWS_AS(bank.update(5, f, 1.0), ParameterError);

    const MemoryBank copy = update_memory(bank, 30, f, 1.0);
    CHECK(copy.entries().back().frame_index == 30);
    CHECK(bank.entries().back().frame_index == 25);
}

TEST_CASE("readout of a single memory pixel copies its value") {
    Rng rng(5);
    const ReadoutParams p = ReadoutParams::random(3, 2, 2, rng);
    const Tensor4 query = random_tensor({1, 3, 4, 4}, rng);
    const Tensor4 mem = random_tensor({1, 3, 1, 1}, rng);
    const Tensor4 pix = memory_pixels(std::vector<Tensor4>{mem});
    const Tensor4 a = attention_map(query, pix, p);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == 1.0);
    const Tensor4 read = memory_read(query, pix, p);
    for (int c = 0; c < 2; ++c) {
        double v = p.value_b[c];
        for (int k = 0; k < 3; ++k) v += p.value_w.at(c, k, 0, 0) * mem[k];
        for (int i = 0; i < 16; ++i) CHECK(std::abs(read[c * 16 + i] - v) < 1e-12);
    }
}

TEST_CASE("uniform attention averages two memory values") {
    Rng rng(6);
    ReadoutParams p = ReadoutParams::random(2, 2, 2, rng);
    p.key_w = Tensor4({2, 2, 1, 1}, 0.0, true);
    p.key_b = Tensor4({1, 2, 1, 1}, 0.0, true);
    const Tensor4 query = random_tensor({1, 2, 2, 2}, rng);
    const Tensor4 mem = random_tensor({1, 2, 1, 2}, rng);
    const Tensor4 pix = memory_pixels(std::vector<Tensor4>{mem});
    const Tensor4 read = memory_read(query, pix, p);
    for (int c = 0; c < 2; ++c) {
        double v1 = p.value_b[c], v2 = p.value_b[c];
        for (int k = 0; k < 2; ++k) {
            v1 += p.value_w.at(c, k, 0, 0) * mem.at(0, k, 0, 0);
            v2 += p.value_w.at(c, k, 0, 0) * mem.at(0, k, 0, 1);
        }
        for (int i = 0; i < 4; ++i) CHECK(std::abs(read[c * 4 + i] - 0.5 * (v1 + v2)) < 1e-12);
    }
}

TEST_CASE("readout invariants") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const ReadoutParams p = ReadoutParams::random(8, 4, 4, rng);
        const Tensor4 query = random_tensor({1, 8, 4, 5}, rng, false, 2.0);
        std::vector<Tensor4> frames;
        for (int m = 0; m < 3; ++m) frames.push_back(random_tensor({1, 8, 4, 5}, rng, false, 2.0));

        const Tensor4 pix = memory_pixels(frames);
        const Tensor4 a = attention_map(query, pix, p);
        const int q = a.shape().h, n = a.shape().w;
        for (int i = 0; i < q; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += a[static_cast<std::size_t>(i) * n + j];
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }

        const Tensor4 fused = readout(query, frames, p);
        std::vector<Tensor4> reversed(frames.rbegin(), frames.rend());
        CHECK(test::max_abs_diff(fused, readout(query, reversed, p)) <= 1e-12);

        // Shuffle individual pixels across the flattened memory.
        std::vector<int> perm(pix.shape().h);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        Tensor4 shuffled(pix.shape());
        for (int c = 0; c < pix.shape().c; ++c)
            for (int i = 0; i < pix.shape().h; ++i) shuffled.at(0, c, i, 0) = pix.at(0, c, perm[i], 0);
        CHECK(test::max_abs_diff(readout_pixels(query, pix, p), readout_pixels(query, shuffled, p)) <= 1e-12);

        for (int m = 1; m <= 3; ++m) {
            const std::vector<Tensor4> some(frames.begin(), frames.begin() + m);
            CHECK(readout(query, some, p).shape() == Shape{1, 8, 4, 5});
        }
    }
    MemoryBank empty;
    Rng r2(1);
    CHECK_THROWS(readout(Tensor4({1, 8, 2, 2}), empty, ReadoutParams::random(8, 4, 4, r2)));
}

TEST_CASE("gate, memory, readout, head and loss compose with exact gradients") {
    Rng rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        const int c = 4;
        BranchSet branches = BranchSet::random(c, 2, rng);
        GateParams gate = GateParams::random(c, 2, rng);
        ReadoutParams ro = ReadoutParams::random(c, 2, 2, rng);
        HeadParams head = HeadParams::random(c, 3, rng);
        ParamSet ps;
        branches.visit([&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        gate.visit("gate", [&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        ro.visit("readout", [&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        head.visit("head", [&](const std::string& n, Tensor4& t) { ps.add(n, t); });
        // Unit-variance weights and nonzero biases keep every relu off its kink.
        for (auto& [name, t] : ps) {
            const double bound = is_bias_name(name) ? 0.5 : std::sqrt(6.0 * t.shape().n / t.numel());
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
        }
        for (const char* name : {"query", "m0", "m1"}) {
            Tensor4 x = random_tensor({1, c, 3, 3}, rng, true);
            for (double& v : x.data()) v = 0.5 * (v + 1.0);
            ps.add(name, x);
        }
        const Labels labels = make_labels({1.0, 1.5, 9.0, 7.5}, 4, 3, 3);
        REQUIRE(labels.positives > 0);
        const BranchCostTable costs = branch_costs({c, 2, 3, 3});
        auto loss = [&] {
            std::vector<Tensor4> memory, weights;
            for (const char* name : {"m0", "m1"}) {
                const DamResult r = dam_apply(ps.get(name), branches, gate, GateMode::soft);
                memory.push_back(r.feature);
                weights.push_back(r.weights);
            }
            const HeadOutput out = head_forward(readout(ps.get("query"), memory, ro), head);
            return compute_loss(out, labels, weights, costs, 0.5).total;
        };
        CHECK(grad_check(loss, ps, 1e-5) < 1e-4);
    }
}

TEST_CASE("labels match a brute-force assignment") {
    const BBox gt{16, 16, 32, 32};
    const Labels lab = make_labels(gt, 4, 16, 16);
    int count = 0;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            const double x = (j + 0.5) * 4, y = (i + 0.5) * 4;
            const bool inside = x >= 24 && x <= 40 && y >= 24 && y <= 40;
            CHECK(lab.positive.at(0, 0, i, j) == (inside ? 1.0 : 0.0));
            count += inside;
        }
    CHECK(count == 16);
    CHECK(lab.positives == 16);
    for (std::size_t i = 0; i < lab.ctr.numel(); ++i) {
        CHECK(lab.ctr[i] >= 0.0);
        CHECK(lab.ctr[i] <= 1.0);
    }
}

TEST_CASE("decoding exact regression targets reproduces the box") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const BBox gt{rng.uniform(2, 30), rng.uniform(2, 30), rng.uniform(6, 30), rng.uniform(6, 30)};
        const Labels lab = make_labels(gt, 4, 16, 16);
        const std::size_t plane = 256;
        for (std::size_t k = 0; k < plane; ++k) {
            if (lab.positive[k] == 0.0) continue;
            HeadOutput out{Tensor4({1, 1, 16, 16}, -5.0), Tensor4({1, 1, 16, 16}, 0.0), Tensor4({1, 4, 16, 16}, 1.0)};
            out.cls[k] = 5.0;
            for (int s = 0; s < 4; ++s) out.reg[s * plane + k] = lab.reg[s * plane + k];
            const Detection d = decode_detection(out, 4, 100.0, 50.0);
            CHECK(std::abs(d.box.x - (gt.x + 100.0)) < 1e-9);
            CHECK(std::abs(d.box.y - (gt.y + 50.0)) < 1e-9);
            CHECK(std::abs(d.box.w - gt.w) < 1e-9);
            CHECK(std::abs(d.box.h - gt.h) < 1e-9);
            CHECK(d.score > 0.0);
            CHECK(d.score < 1.0);
        }
    }
}

TEST_CASE("decode picks the first maximum and clamps tiny boxes") {
    HeadOutput out{Tensor4({1, 1, 2, 2}, 0.0), Tensor4({1, 1, 2, 2}, 0.0), Tensor4({1, 4, 2, 2}, 0.1)};
    const Detection d = decode_detection(out, 4, 0.0, 0.0);
    CHECK(d.row == 0);
    CHECK(d.col == 0);
    CHECK(d.score == 0.25);
    CHECK(d.box.w == 1.0);
    CHECK(d.box.h == 1.0);
    CHECK(d.box.cx() == doctest::Approx(2.0));
}

TEST_CASE("loss terms are nonnegative") {
    Rng rng(3);
    const HeadParams head = HeadParams::random(4, 4, rng);
    for (int trial = 0; trial < 5; ++trial) {
        const HeadOutput out = head_forward(random_tensor({1, 4, 8, 8}, rng), head);
        const Labels lab = make_labels({rng.uniform(0, 10), rng.uniform(0, 10), 12, 14}, 4, 8, 8);
        const Tensor4 w({1, 4, 1, 1}, 0.25);
        const LossTerms t = compute_loss(out, lab, std::vector<Tensor4>{w}, branch_costs({4, 2, 8, 8}), 0.01);
        CHECK(t.cls >= 0.0);
        CHECK(t.ctr >= -1e-12);
        CHECK(t.iou >= 0.0);
        CHECK(t.cost >= 0.0);
        CHECK(t.total.item() == doctest::Approx(t.cls + t.ctr + t.iou + t.cost));
    }
}

TEST_CASE("loss on a hand-built single positive") {
    const Labels lab = make_labels({0.0, 0.0, 4.0, 4.0}, 4, 2, 2);
    REQUIRE(lab.positives == 1);
    REQUIRE(lab.positive[0] == 1.0);
    REQUIRE(lab.ctr[0] == 1.0);
    const std::vector<double> cls{0.3, -1.2, 0.5, -0.7};
    HeadOutput out{Tensor4({1, 1, 2, 2}, cls), Tensor4({1, 1, 2, 2}, {0.4, 0.0, 0.0, 0.0}),
                   Tensor4({1, 4, 2, 2}, 1.0)};
    const double pred[4] = {1.0, 2.0, 3.0, 2.5};
    for (int k = 0; k < 4; ++k) out.reg[k * 4] = pred[k];

    auto bce = [](double x, double y) { return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))); };
    double want_cls = 0.0;
    for (int i = 0; i < 4; ++i) want_cls += bce(cls[i], i == 0 ? 1.0 : 0.0);
    const double want_ctr = bce(0.4, 1.0);
    const double inter = (1.0 + 2.0) * (2.0 + 2.0);
    const double want_iou = 1.0 - inter / (4.0 * 4.5 + 16.0 - inter);

    const LossTerms t = compute_loss(out, lab, {}, BranchCostTable{}, 0.0);
    CHECK(std::abs(t.cls - want_cls) < 1e-12);
    CHECK(std::abs(t.ctr - want_ctr) < 1e-12);
    CHECK(std::abs(t.iou - want_iou) < 1e-12);
    CHECK(std::abs(t.total.item() - (want_cls + want_ctr + want_iou)) < 1e-12);
}

TEST_CASE("perfect predictions reach the loss floor") {
    const Labels lab = make_labels({8.0, 6.0, 16.0, 18.0}, 4, 8, 8);
    REQUIRE(lab.positives > 1);
    HeadOutput out{Tensor4({1, 1, 8, 8}), Tensor4({1, 1, 8, 8}), Tensor4({1, 4, 8, 8}, 1.0)};
    const std::size_t plane = 64;
    for (std::size_t k = 0; k < plane; ++k) {
        const bool pos = lab.positive[k] == 1.0;
        out.cls[k] = pos ? 20.0 : -20.0;
        const double p = lab.ctr[k];
        out.ctr[k] = p >= 1.0 ? 20.0 : (p <= 0.0 ? -20.0 : std::log(p / (1.0 - p)));
        if (pos)
            for (int s = 0; s < 4; ++s) out.reg[s * plane + k] = lab.reg[s * plane + k];
    }
    const LossTerms t = compute_loss(out, lab, {}, BranchCostTable{}, 0.0);
    CHECK(t.total.item() <= 1e-6);
}

TEST_CASE("loss ignores gate weights when lambda is zero") {
    Rng rng(8);
    const HeadParams head = HeadParams::random(4, 4, rng);
    const HeadOutput out = head_forward(random_tensor({1, 4, 8, 8}, rng), head);
    const Labels lab = make_labels({10.0, 9.0, 12.0, 14.0}, 4, 8, 8);
    const BranchCostTable costs = branch_costs({4, 2, 8, 8});
    const Tensor4 a({1, 4, 1, 1}, {0.7, 0.1, 0.1, 0.1});
    const Tensor4 b({1, 4, 1, 1}, {0.0, 0.0, 0.0, 1.0});
    const double la = compute_loss(out, lab, std::vector<Tensor4>{a}, costs, 0.0).total.item();
    const double lb = compute_loss(out, lab, std::vector<Tensor4>{b}, costs, 0.0).total.item();
    CHECK(la == lb);
    CHECK(compute_loss(out, lab, std::vector<Tensor4>{b}, costs, 0.1).total.item() > la);
}

TEST_CASE("classification term is normalized by the positive count") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const Labels lab = make_labels({rng.uniform(0, 8), rng.uniform(0, 8), 16, 18}, 4, 8, 8);
        REQUIRE(lab.positives > 1);
        const HeadOutput out{random_tensor({1, 1, 8, 8}, rng, false, 3.0), random_tensor({1, 1, 8, 8}, rng),
                             Tensor4({1, 4, 8, 8}, 2.0)};
        double sum = 0.0;
        for (std::size_t k = 0; k < 64; ++k) {
            const double x = out.cls[k], y = lab.cls[k];
            sum += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        }
        const LossTerms t = compute_loss(out, lab, {}, BranchCostTable{}, 0.0);
        CHECK(std::abs(t.cls - sum / lab.positives) < 1e-12);
    }
}
