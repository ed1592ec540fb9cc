#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dastm/head.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

enum class Phase { stable, occlusion, fast };
const char* phase_name(Phase p);
Phase parse_phase(const std::string& s);

struct ScenarioSpec {
    std::uint64_t seed = 0;
    int height = 128;
    int width = 128;
    std::vector<std::pair<Phase, int>> schedule;
    double base_size = 16.0;       // nominal gt box side in pixels
    double intensity = 0.6;        // blob peak above background
    double occlusion_min = 0.6;
    double occlusion_max = 0.8;
    double base_speed = 0.8;       // px/frame in stable and occlusion phases
    double fast_multiplier = 6.0;
};

// Integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Sequence {
    std::vector<Tensor4> frames;  // (1, 1, H, W) in [0, 1]
    std::vector<BBox> gt;
    std::vector<Phase> phases;
    std::vector<std::optional<PixelRect>> occluders;

    std::size_t size() const { return frames.size(); }
};

/// Renders a seeded sequence: an anisotropic Gaussian blob over a textured
/// background. Stable phases drift slowly with mild shape jitter; occlusion
/// phases cover 60-80% of the target box with an occluder; fast phases move
/// multiplier x faster with 3-sample motion blur. Motion reflects at borders.
Sequence generate(const ScenarioSpec& spec);

/// Pixels whose centers lie inside a box.
PixelRect box_pixels(const BBox& box);

struct BenchmarkSplit {
    std::vector<ScenarioSpec> train;
    std::vector<ScenarioSpec> eval;
};

/// Disjoint seed ranges for train and eval; every spec visits all three phases.
BenchmarkSplit split_benchmark(int n_train, int n_eval, std::uint64_t base_seed);

/// Default schedule: a stable opening followed by the three phases in a
/// seed-dependent order.
ScenarioSpec default_spec(std::uint64_t seed);

/// Integer-origin square crop centered at (cx, cy); out-of-frame pixels repeat
/// the nearest edge. Returns the crop and writes its top-left origin.
Tensor4 crop_frame(const Tensor4& frame, double cx, double cy, int size, int& origin_x, int& origin_y);

}  // namespace dastm
