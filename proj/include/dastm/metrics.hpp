#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "dastm/gate.hpp"
#include "dastm/head.hpp"

namespace dastm {

/// Per-frame predictions against ground truth. Frames whose ground truth is
/// degenerate (w <= 0 or h <= 0, e.g. full occlusion) are excluded from every
/// metric.
struct TrackResult {
    std::vector<BBox> pred;
    std::vector<BBox> gt;
};

double iou(const BBox& a, const BBox& b);
double center_distance(const BBox& a, const BBox& b);

inline constexpr int kSuccessThresholds = 101;
inline constexpr int kNormPrecisionThresholds = 51;
inline constexpr double kPrecisionPixels = 20.0;

struct OtbScores {
    std::vector<double> thresholds;  // 0, 0.01, ..., 1
    std::vector<double> success;     // fraction with IoU > threshold
    double success_auc = 0;
    double precision = 0;            // fraction with center error < 20 px
};

OtbScores otb_success_precision(const TrackResult& r);

/// LaSOT-style normalized precision: AUC over theta in [0, 0.5] (51 points) of
/// the fraction of frames with size-normalized center error < theta.
double normalized_precision(const TrackResult& r);

struct Got10kScores {
    double ao = 0;
    double sr50 = 0;
    double sr75 = 0;
};

/// Per-sequence AO and SR@{0.5, 0.75} (strict >), averaged over sequences.
Got10kScores got10k_ao_sr(const std::vector<TrackResult>& results);

struct VotScores {
    double accuracy = 0;
    int failures = 0;
};

/// Simplified VOT A/R: an IoU = 0 frame is a failure; the next reinit_skip
/// frames are skipped before tracking resumes. Accuracy is the mean IoU over
/// the remaining evaluated frames.
VotScores vot_accuracy_robustness(const TrackResult& r, int reinit_skip = 5);
VotScores vot_accuracy_robustness(const std::vector<double>& ious, int reinit_skip = 5);

struct GateTraceRow {
    int frame = 0;
    std::string phase;
    std::array<double, kBranchCount> weights{};
    int selected = 0;
    double flops = 0;
};

using GateTrace = std::vector<GateTraceRow>;

struct BranchStats {
    std::array<double, kBranchCount> mean{};
    std::array<double, kBranchCount> std{};  // population
    int frames = 0;
};

struct GateTraceStats {
    std::map<std::string, BranchStats> per_phase;
    BranchStats overall;
    double activation_rate = 0;  // fraction of frames selecting CBAM
    double mean_flops = 0;
};

GateTraceStats gate_trace_stats(const GateTrace& trace);

}  // namespace dastm
