#include "dastm/head.hpp"

#include <algorithm>
#include <cmath>

#include "dastm/error.hpp"
#include "dastm/ops.hpp"

namespace dastm {

using namespace ops;

namespace {

HeadBranchParams zero_branch(int channels, int hidden, int outputs) {
    return {Tensor4({hidden, channels, 3, 3}, 0.0, true), Tensor4({1, hidden, 1, 1}, 0.0, true),
            Tensor4({hidden, hidden, 3, 3}, 0.0, true),   Tensor4({1, hidden, 1, 1}, 0.0, true),
            Tensor4({outputs, hidden, 1, 1}, 0.0, true),  Tensor4({1, outputs, 1, 1}, 0.0, true)};
}

HeadBranchParams random_branch(int channels, int hidden, int outputs, double out_bias, Rng& rng) {
    HeadBranchParams b = zero_branch(channels, hidden, outputs);
    b.conv1_w = random_weight({hidden, channels, 3, 3}, 9.0 * channels, rng);
    b.conv2_w = random_weight({hidden, hidden, 3, 3}, 9.0 * hidden, rng);
    // Small output layer so initial predictions sit near the bias prior.
    b.out_w = random_weight({outputs, hidden, 1, 1}, 100.0 * hidden, rng);
    for (double& v : b.out_b.data()) v = out_bias;
    return b;
}

void visit_branch(const std::string& prefix, HeadBranchParams& b, const ParamVisitor& fn) {
    fn(prefix + ".conv1.w", b.conv1_w);
    fn(prefix + ".conv1.b", b.conv1_b);
    fn(prefix + ".conv2.w", b.conv2_w);
    fn(prefix + ".conv2.b", b.conv2_b);
    fn(prefix + ".out.w", b.out_w);
    fn(prefix + ".out.b", b.out_b);
}

Tensor4 branch_forward(const Tensor4& x, const HeadBranchParams& b) {
    const Tensor4 h1 = relu(conv2d(x, b.conv1_w, b.conv1_b, 1, 1));
    const Tensor4 h2 = relu(conv2d(h1, b.conv2_w, b.conv2_b, 1, 1));
    return conv2d(h2, b.out_w, b.out_b, 1, 0);
}

double sigmoid_value(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

HeadParams HeadParams::zeros(int channels, int hidden) {
    return {channels, hidden, zero_branch(channels, hidden, 1), zero_branch(channels, hidden, 1),
            zero_branch(channels, hidden, 4)};
}

HeadParams HeadParams::random(int channels, int hidden, Rng& rng) {
    HeadParams p;
    p.channels = channels;
    p.hidden = hidden;
    p.cls = random_branch(channels, hidden, 1, -2.0, rng);
    p.ctr = random_branch(channels, hidden, 1, 0.0, rng);
    p.reg = random_branch(channels, hidden, 4, 2.0, rng);
    return p;
}

void HeadParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    visit_branch(prefix + ".cls", cls, fn);
    visit_branch(prefix + ".ctr", ctr, fn);
    visit_branch(prefix + ".reg", reg, fn);
}

HeadOutput head_forward(const Tensor4& fused, const HeadParams& p) {
    if (fused.shape().c != p.channels)
        throw DimensionError("head expects " + std::to_string(p.channels) + " channels, got " +
                             std::to_string(fused.shape().c));
    return {branch_forward(fused, p.cls), branch_forward(fused, p.ctr), exponential(branch_forward(fused, p.reg))};
}

Detection decode_detection(const HeadOutput& out, int stride, double origin_x, double origin_y) {
    if (stride < 1) throw ParameterError("decode stride must be >= 1");
    const Shape& s = out.cls.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < plane; ++i) {
        const double score = sigmoid_value(out.cls[i]) * sigmoid_value(out.ctr[i]);
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    Detection d;
    d.score = best_score;
    d.row = static_cast<int>(best / s.w);
    d.col = static_cast<int>(best % s.w);
    const double cx = (d.col + 0.5) * stride;
    const double cy = (d.row + 0.5) * stride;
    const double l = out.reg[0 * plane + best], t = out.reg[1 * plane + best], r = out.reg[2 * plane + best],
                 b = out.reg[3 * plane + best];
    const double x0 = cx - l, y0 = cy - t, x1 = cx + r, y1 = cy + b;
    const double w = std::max(1.0, x1 - x0);
    const double h = std::max(1.0, y1 - y0);
    const double mx = 0.5 * (x0 + x1), my = 0.5 * (y0 + y1);
    d.box = {mx - 0.5 * w + origin_x, my - 0.5 * h + origin_y, w, h};
    return d;
}

Labels make_labels(const BBox& gt, int stride, int hf, int wf) {
    if (stride < 1) throw ParameterError("label stride must be >= 1");
    Labels lab{Tensor4({1, 1, hf, wf}), Tensor4({1, 1, hf, wf}), Tensor4({1, 4, hf, wf}), Tensor4({1, 1, hf, wf}), 0};
    const double half_w = 0.5 * kPositiveShrink * gt.w, half_h = 0.5 * kPositiveShrink * gt.h;
    const double sx0 = gt.cx() - half_w, sx1 = gt.cx() + half_w;
    const double sy0 = gt.cy() - half_h, sy1 = gt.cy() + half_h;
    const std::size_t plane = static_cast<std::size_t>(hf) * wf;
    for (int i = 0; i < hf; ++i)
        for (int j = 0; j < wf; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * wf + j;
            const double cx = (j + 0.5) * stride, cy = (i + 0.5) * stride;
            const double l = cx - gt.x, t = cy - gt.y, r = gt.x + gt.w - cx, b = gt.y + gt.h - cy;
            lab.reg[0 * plane + k] = l;
            lab.reg[1 * plane + k] = t;
            lab.reg[2 * plane + k] = r;
            lab.reg[3 * plane + k] = b;
            const bool pos = cx >= sx0 && cx <= sx1 && cy >= sy0 && cy <= sy1 && l > 0 && t > 0 && r > 0 && b > 0;
            if (!pos) continue;
            lab.positive[k] = 1.0;
            lab.cls[k] = 1.0;
            lab.ctr[k] = std::sqrt((std::min(l, r) / std::max(l, r)) * (std::min(t, b) / std::max(t, b)));
            ++lab.positives;
        }
    return lab;
}

LossTerms compute_loss(const HeadOutput& out, const Labels& labels, std::span<const Tensor4> gate_weights,
                       const BranchCostTable& costs, double lambda_cost) {
    if (!(out.cls.shape() == labels.cls.shape()) || !(out.reg.shape() == labels.reg.shape()))
        throw DimensionError("loss shape mismatch: head " + out.cls.shape().str() + " vs labels " +
                             labels.cls.shape().str());
    const Tensor4 all(labels.cls.shape(), 1.0);
    // Summed over every location and divided by the positive count, so the
    // few positives are not drowned by the background average.
    const Tensor4 cls = scale(bce_with_logits(out.cls, labels.cls, all),
                              static_cast<double>(all.numel()) / std::max(1, labels.positives));
    const Tensor4 ctr = bce_with_logits(out.ctr, labels.ctr, labels.positive, true);
    const Tensor4 iou = iou_loss(out.reg, labels.reg, labels.positive);
    Tensor4 total = add(add(cls, ctr), iou);
    LossTerms terms;
    terms.cls = cls.item();
    terms.ctr = ctr.item();
    terms.iou = iou.item();
    if (lambda_cost != 0.0 && !gate_weights.empty()) {
        const double norm = costs.attention_total();
        if (!(norm > 0.0)) throw ParameterError("cost regularizer needs a positive all-branches cost");
        const Tensor4 cost_vec({1, kBranchCount, 1, 1}, std::vector<double>(costs.cost.begin(), costs.cost.end()));
        Tensor4 expected = sum(mul(gate_weights[0], cost_vec));
        for (std::size_t t = 1; t < gate_weights.size(); ++t)
            expected = add(expected, sum(mul(gate_weights[t], cost_vec)));
        const Tensor4 cost_term = scale(expected, lambda_cost / norm);
        terms.cost = cost_term.item();
        total = add(total, cost_term);
    }
    terms.total = total;
    return terms;
}

}  // namespace dastm
