#include "dastm/tracker.hpp"

#include <algorithm>

#include "dastm/error.hpp"
#include "dastm/rng.hpp"

namespace dastm {

TrackOutput track_sequence(const Model& model, const Sequence& seq, const TrackOptions& options) {
    if (seq.size() == 0 || seq.gt.empty()) throw ParameterError("sequence has no frames");
    if (options.mode == GateMode::budgeted && !options.budget)
        throw ParameterError("budgeted mode requires a budget");
    const int crop = model.config().crop;
    const Shape& fshape = seq.frames[0].shape();

    std::optional<BudgetState> budget;
    if (options.budget) budget = BudgetState{model.costs(), *options.budget};
    const GateMode mode = options.budget && options.mode != GateMode::soft ? GateMode::budgeted : options.mode;
    Rng rng(options.random_seed);
    const NoGradGuard no_grad;

    MemoryBank bank(options.policy);
    TrackOutput out;

    auto enhance_at = [&](int t, double cx, double cy) {
        int ox = 0, oy = 0;
        const Tensor4 f = model.features(crop_frame(seq.frames[t], cx, cy, crop, ox, oy));
        EnhanceRequest req;
        req.mode = mode;
        req.budget = budget ? &*budget : nullptr;
        req.frame_index = t;
        if (options.forced) req.forced = options.forced;
        else if (options.random_decisions) req.forced = static_cast<Branch>(rng.below(kBranchCount));
        Enhanced e = model.enhance(f, req);
        GateTraceRow row;
        row.frame = t;
        row.phase = t < static_cast<int>(seq.phases.size()) ? phase_name(seq.phases[t]) : "stable";
        row.weights = e.weight_values;
        row.selected = e.selected;
        row.flops = e.flops;
        out.trace.push_back(row);
        return e.feature;
    };

    const BBox init = seq.gt[0];
    out.boxes.push_back(init);
    bank.update(0, enhance_at(0, init.cx(), init.cy()), 1.0);

    BBox prev = init;
    for (int t = 1; t < static_cast<int>(seq.size()); ++t) {
        int ox = 0, oy = 0;
        const Tensor4 query = model.features(crop_frame(seq.frames[t], prev.cx(), prev.cy(), crop, ox, oy));
        const std::vector<Tensor4> memory = bank.features();
        const Detection det = decode_detection(model.predict(query, memory), kFeatureStride, ox, oy);
        BBox box = det.box;
        // Keep the center inside the image so the next crop stays anchored.
        const double cx = std::clamp(box.cx(), 0.0, static_cast<double>(fshape.w));
        const double cy = std::clamp(box.cy(), 0.0, static_cast<double>(fshape.h));
        box.x = cx - 0.5 * box.w;
        box.y = cy - 0.5 * box.h;
        out.boxes.push_back(box);
        const Tensor4 enhanced = enhance_at(t, cx, cy);
        bank.update(t, enhanced, det.score);
        prev = box;
    }
    return out;
}

}  // namespace dastm
