#include "dastm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dastm/error.hpp"

namespace dastm {

namespace {

bool valid_gt(const BBox& b) { return b.w > 0 && b.h > 0; }

void check_result(const TrackResult& r) {
    if (r.pred.size() != r.gt.size())
        throw ParameterError("prediction count " + std::to_string(r.pred.size()) + " != ground-truth count " +
                             std::to_string(r.gt.size()));
    if (r.pred.empty()) throw ParameterError("empty tracking result");
}

std::vector<double> frame_ious(const TrackResult& r) {
    std::vector<double> out;
    for (std::size_t i = 0; i < r.gt.size(); ++i)
        if (valid_gt(r.gt[i])) out.push_back(iou(r.pred[i], r.gt[i]));
    return out;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

OtbScores otb_success_precision(const TrackResult& r) {
    check_result(r);
    const std::vector<double> ious = frame_ious(r);
    if (ious.empty()) throw ParameterError("no frame with valid ground truth");
    OtbScores s;
    double hits = 0;
    for (std::size_t i = 0; i < r.gt.size(); ++i)
        if (valid_gt(r.gt[i]) && center_distance(r.pred[i], r.gt[i]) < kPrecisionPixels) hits += 1;
    s.precision = hits / static_cast<double>(ious.size());
    double area = 0.0;
    for (int k = 0; k < kSuccessThresholds; ++k) {
        const double theta = k / 100.0;
        double count = 0;
        for (double v : ious)
            if (v > theta) count += 1;
        const double frac = count / static_cast<double>(ious.size());
        s.thresholds.push_back(theta);
        s.success.push_back(frac);
        area += frac;
    }
    s.success_auc = area / kSuccessThresholds;
    return s;
}

double normalized_precision(const TrackResult& r) {
    check_result(r);
    std::vector<double> errors;
    for (std::size_t i = 0; i < r.gt.size(); ++i) {
        const BBox& g = r.gt[i];
        if (!valid_gt(g)) continue;
        const double dx = (r.pred[i].cx() - g.cx()) / g.w;
        const double dy = (r.pred[i].cy() - g.cy()) / g.h;
        errors.push_back(std::sqrt(dx * dx + dy * dy));
    }
    if (errors.empty()) throw ParameterError("normalized precision: every frame has degenerate ground truth");
    double area = 0.0;
    for (int k = 0; k < kNormPrecisionThresholds; ++k) {
        const double theta = 0.5 * k / (kNormPrecisionThresholds - 1);
        double count = 0;
        for (double e : errors)
            if (e < theta) count += 1;
        area += count / static_cast<double>(errors.size());
    }
    return area / kNormPrecisionThresholds;
}

Got10kScores got10k_ao_sr(const std::vector<TrackResult>& results) {
    if (results.empty()) throw ParameterError("got10k evaluation over zero sequences");
    Got10kScores total;
    for (const TrackResult& r : results) {
        check_result(r);
        const std::vector<double> ious = frame_ious(r);
        if (ious.empty()) throw ParameterError("sequence without valid ground truth");
        double sum = 0, s50 = 0, s75 = 0;
        for (double v : ious) {
            sum += v;
            if (v > 0.5) s50 += 1;
            if (v > 0.75) s75 += 1;
        }
        const double n = static_cast<double>(ious.size());
        total.ao += sum / n;
        total.sr50 += s50 / n;
        total.sr75 += s75 / n;
    }
    const double m = static_cast<double>(results.size());
    total.ao /= m;
    total.sr50 /= m;
    total.sr75 /= m;
    return total;
}

VotScores vot_accuracy_robustness(const std::vector<double>& ious, int reinit_skip) {
    if (reinit_skip < 0) throw ParameterError("reinit skip must be >= 0");
    VotScores s;
    double sum = 0;
    int counted = 0;
    std::size_t i = 0;
    while (i < ious.size()) {
        if (ious[i] == 0.0) {
            ++s.failures;
            i += 1 + static_cast<std::size_t>(reinit_skip);
            continue;
        }
        sum += ious[i];
        ++counted;
        ++i;
    }
    s.accuracy = counted > 0 ? sum / counted : 0.0;
    return s;
}

VotScores vot_accuracy_robustness(const TrackResult& r, int reinit_skip) {
    check_result(r);
    return vot_accuracy_robustness(frame_ious(r), reinit_skip);
}

GateTraceStats gate_trace_stats(const GateTrace& trace) {
    if (trace.empty()) throw ParameterError("gate trace is empty");
    GateTraceStats out;
    std::map<std::string, std::vector<const GateTraceRow*>> groups;
    for (const auto& row : trace) groups[row.phase].push_back(&row);

    auto summarize = [](const std::vector<const GateTraceRow*>& rows) {
        BranchStats s;
        s.frames = static_cast<int>(rows.size());
        for (int b = 0; b < kBranchCount; ++b) {
            double sum = 0;
            for (const auto* r : rows) sum += r->weights[b];
            const double mean = sum / rows.size();
            double var = 0;
            for (const auto* r : rows) var += (r->weights[b] - mean) * (r->weights[b] - mean);
            s.mean[b] = mean;
            s.std[b] = std::sqrt(var / rows.size());
        }
        return s;
    };

    std::vector<const GateTraceRow*> all;
    double heavy = 0, flops = 0;
    for (const auto& row : trace) {
        all.push_back(&row);
        if (row.selected == static_cast<int>(Branch::cbam)) heavy += 1;
        flops += row.flops;
    }
    for (const auto& [phase, rows] : groups) out.per_phase[phase] = summarize(rows);
    out.overall = summarize(all);
    out.activation_rate = heavy / trace.size();
    out.mean_flops = flops / trace.size();
    return out;
}

}  // namespace dastm
