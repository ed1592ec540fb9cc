#pragma once

#include <span>
#include <string>

#include "dastm/attention.hpp"
#include "dastm/gate.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

/// Axis-aligned box, top-left corner plus size, in pixels.
struct BBox {
    double x = 0, y = 0, w = 0, h = 0;

    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    bool operator==(const BBox&) const = default;
};

struct HeadBranchParams {
    Tensor4 conv1_w, conv1_b;  // 3x3, c -> hidden
    Tensor4 conv2_w, conv2_b;  // 3x3, hidden -> hidden
    Tensor4 out_w, out_b;      // 1x1, hidden -> outputs
};

struct HeadParams {
    int channels = 0;
    int hidden = 0;
    HeadBranchParams cls, ctr, reg;

    static HeadParams zeros(int channels, int hidden);
    static HeadParams random(int channels, int hidden, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct HeadOutput {
    Tensor4 cls;  // (1, 1, hf, wf) logits
    Tensor4 ctr;  // (1, 1, hf, wf) logits
    Tensor4 reg;  // (1, 4, hf, wf) distances l, t, r, b; exp-mapped so > 0
};

struct Detection {
    double score = 0;
    BBox box;
    int row = 0;
    int col = 0;
};

HeadOutput head_forward(const Tensor4& fused, const HeadParams& p);

/// Picks the first location maximizing sigmoid(cls) * sigmoid(ctr), maps it
/// to crop coordinates ((col + 0.5) * stride, (row + 0.5) * stride), builds
/// the box from its distances, shifts by the crop origin and clamps w, h >= 1
/// about the box center.
Detection decode_detection(const HeadOutput& out, int stride, double origin_x, double origin_y);

struct Labels {
    Tensor4 cls;       // (1, 1, hf, wf) 0/1
    Tensor4 ctr;       // (1, 1, hf, wf) centerness on positives, else 0
    Tensor4 reg;       // (1, 4, hf, wf) distances to the gt sides
    Tensor4 positive;  // (1, 1, hf, wf) 0/1
    int positives = 0;
};

inline constexpr double kPositiveShrink = 0.5;

/// Anchor-free assignment: a location is positive when its mapped center lies
/// inside the gt box shrunk by 0.5 about its center (boundaries inclusive).
Labels make_labels(const BBox& gt, int stride, int hf, int wf);

struct LossTerms {
    Tensor4 total;  // differentiable scalar
    double cls = 0;
    double ctr = 0;
    double iou = 0;
    double cost = 0;
};

/// BCE(cls) summed over all locations and divided by max(1, positives)
/// + BCE(ctr) over positives (target entropy
/// removed) + mean(1 - IoU) over positives + lambda * expected gate cost
/// normalized by the all-branches cost. gate_weights holds one (1, B, 1, 1)
/// tensor per gated memory frame.
LossTerms compute_loss(const HeadOutput& out, const Labels& labels, std::span<const Tensor4> gate_weights,
                       const BranchCostTable& costs, double lambda_cost);

}  // namespace dastm
