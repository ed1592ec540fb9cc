#pragma once

#include <cstdint>
#include <optional>

#include "dastm/metrics.hpp"
#include "dastm/model.hpp"
#include "dastm/scenes.hpp"

namespace dastm {

struct TrackOptions {
    GateMode mode = GateMode::hard;
    std::optional<double> budget;  // per-frame attention FLOPs; required by budgeted mode
    std::optional<Branch> forced;
    bool random_decisions = false;  // uniformly drawn one-hot decisions
    std::uint64_t random_seed = 0;
    MemoryPolicy policy;
};

struct TrackOutput {
    std::vector<BBox> boxes;
    GateTrace trace;
};

/// Frame 0 initializes memory from its ground-truth crop. Every later frame is
/// cropped at the previous prediction, read against memory, decoded, mapped
/// back to image coordinates, and its crop at the new prediction is enhanced
/// (one trace row per frame) and offered to the memory bank.
TrackOutput track_sequence(const Model& model, const Sequence& seq, const TrackOptions& options);

}  // namespace dastm
