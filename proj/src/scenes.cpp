#include "dastm/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "dastm/error.hpp"
#include "dastm/rng.hpp"

namespace dastm {

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::stable:
            return "stable";
        case Phase::occlusion:
            return "occlusion";
        case Phase::fast:
            return "fast";
    }
    return "?";
}

Phase parse_phase(const std::string& s) {
    if (s == "stable") return Phase::stable;
    if (s == "occlusion") return Phase::occlusion;
    if (s == "fast") return Phase::fast;
    throw ConfigError("unknown phase label '" + s + "'");
}

namespace {

std::vector<double> textured_background(int h, int w, Rng& rng) {
    std::vector<double> noise(static_cast<std::size_t>(h) * w);
    for (double& v : noise) v = rng.uniform();
    // Two passes of a 5x5 box blur give a smooth texture.
    std::vector<double> tmp(noise.size());
    for (int pass = 0; pass < 2; ++pass) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                int n = 0;
                for (int dy = -2; dy <= 2; ++dy)
                    for (int dx = -2; dx <= 2; ++dx) {
                        const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
                        s += noise[static_cast<std::size_t>(yy) * w + xx];
                        ++n;
                    }
                tmp[static_cast<std::size_t>(y) * w + x] = s / n;
            }
        noise.swap(tmp);
    }
    const auto [lo, hi] = std::minmax_element(noise.begin(), noise.end());
    const double a = *lo, b = *hi;
    for (double& v : noise) v = 0.1 + 0.3 * (b > a ? (v - a) / (b - a) : 0.5);
    return noise;
}

struct Target {
    double cx, cy;
    double sx, sy;  // Gaussian sigmas; the gt box spans +-2 sigma
    double heading;
};

BBox target_box(const Target& t) { return {t.cx - 2 * t.sx, t.cy - 2 * t.sy, 4 * t.sx, 4 * t.sy}; }

void add_blob(std::vector<double>& img, int h, int w, double cx, double cy, double sx, double sy, double amp) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - 4 * sx))), x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + 4 * sx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - 4 * sy))), y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + 4 * sy)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x + 0.5 - cx) / sx, dy = (y + 0.5 - cy) / sy;
            img[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-0.5 * (dx * dx + dy * dy));
        }
}

// Keeps the whole box inside the frame, reflecting the heading on contact.
void reflect(Target& t, int h, int w) {
    const double mx = 2 * t.sx + 1, my = 2 * t.sy + 1;
    if (t.cx < mx) {
        t.cx = std::min(2 * mx - t.cx, w - mx);
        t.heading = std::numbers::pi - t.heading;
    } else if (t.cx > w - mx) {
        t.cx = std::max(2 * (w - mx) - t.cx, mx);
        t.heading = std::numbers::pi - t.heading;
    }
    if (t.cy < my) {
        t.cy = std::min(2 * my - t.cy, h - my);
        t.heading = -t.heading;
    } else if (t.cy > h - my) {
        t.cy = std::max(2 * (h - my) - t.cy, my);
        t.heading = -t.heading;
    }
}

}  // namespace

PixelRect box_pixels(const BBox& box) {
    // Pixel c has its center at c + 0.5.
    PixelRect r;
    r.x0 = static_cast<int>(std::ceil(box.x - 0.5));
    r.x1 = static_cast<int>(std::ceil(box.x + box.w - 0.5));
    r.y0 = static_cast<int>(std::ceil(box.y - 0.5));
    r.y1 = static_cast<int>(std::ceil(box.y + box.h - 0.5));
    return r;
}

Sequence generate(const ScenarioSpec& spec) {
    if (spec.height < 16 || spec.width < 16) throw ConfigError("scenario frame must be at least 16x16");
    if (spec.schedule.empty()) throw ConfigError("scenario schedule is empty");
    for (const auto& [phase, frames] : spec.schedule)
        if (frames < 1) throw ConfigError("phase durations must be >= 1");
    if (!(spec.occlusion_min >= 0 && spec.occlusion_max <= 1 && spec.occlusion_min <= spec.occlusion_max))
        throw ConfigError("occlusion fraction range must lie in [0, 1]");
    if (4 * spec.base_size * 1.5 >= std::min(spec.height, spec.width))
        throw ConfigError("target too large for the frame");

    const int h = spec.height, w = spec.width;
    Rng rng(spec.seed);
    const std::vector<double> background = textured_background(h, w, rng);

    const double aspect = rng.uniform(0.75, 1.33);
    const double base_sigma = spec.base_size / 4.0;
    Target t{rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h, base_sigma * std::sqrt(aspect),
             base_sigma / std::sqrt(aspect), rng.uniform(0.0, 2 * std::numbers::pi)};
    const double sx0 = t.sx, sy0 = t.sy;

    Sequence seq;
    bool first = true;
    for (const auto& [phase, frames] : spec.schedule) {
        const bool occluding = phase == Phase::occlusion;
        const int occluder_side = rng.below(2) == 0 ? -1 : 1;
        for (int f = 0; f < frames; ++f) {
            const double speed = phase == Phase::fast ? spec.fast_multiplier * spec.base_speed : spec.base_speed;
            std::array<std::pair<double, double>, 3> subpositions{};
            if (first) {
                subpositions.fill({t.cx, t.cy});
                first = false;
            } else {
                t.heading += rng.uniform(-0.3, 0.3);
                if (phase != Phase::fast) {
                    // Mild shape jitter around the initial sigmas.
                    t.sx = std::clamp(t.sx * (1.0 + 0.02 * rng.normal()), 0.9 * sx0, 1.1 * sx0);
                    t.sy = std::clamp(t.sy * (1.0 + 0.02 * rng.normal()), 0.9 * sy0, 1.1 * sy0);
                }
                const double px = t.cx, py = t.cy;
                t.cx += speed * std::cos(t.heading);
                t.cy += speed * std::sin(t.heading);
                reflect(t, h, w);
                for (int k = 0; k < 3; ++k) {
                    const double a = (k + 1) / 3.0;
                    subpositions[k] = {px + a * (t.cx - px), py + a * (t.cy - py)};
                }
                if (phase != Phase::fast) subpositions.fill({t.cx, t.cy});
            }

            std::vector<double> img = background;
            for (double& v : img) v += 0.02 * rng.normal();
            for (const auto& [bx, by] : subpositions) add_blob(img, h, w, bx, by, t.sx, t.sy, spec.intensity / 3.0);

            const BBox box = target_box(t);
            std::optional<PixelRect> occ;
            if (occluding) {
                const PixelRect bp = box_pixels(box);
                const int cols = bp.x1 - bp.x0;
                const double frac = rng.uniform(spec.occlusion_min, spec.occlusion_max);
                const int covered = static_cast<int>(std::lround(frac * cols));
                PixelRect r;
                r.y0 = std::max(0, bp.y0 - 2);
                r.y1 = std::min(h, bp.y1 + 2);
                if (occluder_side < 0) {
                    r.x0 = std::max(0, bp.x0 - 2);
                    r.x1 = bp.x0 + covered;
                } else {
                    r.x0 = bp.x1 - covered;
                    r.x1 = std::min(w, bp.x1 + 2);
                }
                for (int y = r.y0; y < r.y1; ++y)
                    for (int x = r.x0; x < r.x1; ++x)
                        img[static_cast<std::size_t>(y) * w + x] = 0.3 + 0.02 * rng.normal();
                occ = r;
            }
            for (double& v : img) v = std::clamp(v, 0.0, 1.0);

            seq.frames.emplace_back(Shape{1, 1, h, w}, std::move(img));
            seq.gt.push_back(box);
            seq.phases.push_back(phase);
            seq.occluders.push_back(occ);
        }
    }
    return seq;
}

ScenarioSpec default_spec(std::uint64_t seed) {
    ScenarioSpec spec;
    spec.seed = seed;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Phase> order = {Phase::occlusion, Phase::fast, Phase::stable};
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    spec.schedule.emplace_back(Phase::stable, 10);
    for (Phase p : order) spec.schedule.emplace_back(p, 10);
    spec.base_size = rng.uniform(14.0, 20.0);
    return spec;
}

BenchmarkSplit split_benchmark(int n_train, int n_eval, std::uint64_t base_seed) {
    if (n_train < 1 || n_eval < 1) throw ConfigError("benchmark split needs at least one train and one eval sequence");
    constexpr std::uint64_t kRange = 100000;
    if (n_train >= static_cast<int>(kRange / 2) || n_eval >= static_cast<int>(kRange / 2))
        throw ConfigError("benchmark split too large");
    BenchmarkSplit split;
    for (int i = 0; i < n_train; ++i) split.train.push_back(default_spec(base_seed * kRange + i));
    for (int i = 0; i < n_eval; ++i) split.eval.push_back(default_spec(base_seed * kRange + kRange / 2 + i));
    return split;
}

Tensor4 crop_frame(const Tensor4& frame, double cx, double cy, int size, int& origin_x, int& origin_y) {
    const Shape& s = frame.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("crop_frame expects a (1,1,H,W) frame, got " + s.str());
    origin_x = static_cast<int>(std::lround(cx)) - size / 2;
    origin_y = static_cast<int>(std::lround(cy)) - size / 2;
    Tensor4 out({1, 1, size, size});
    for (int y = 0; y < size; ++y) {
        const int sy = std::clamp(origin_y + y, 0, s.h - 1);
        for (int x = 0; x < size; ++x) {
            const int sx = std::clamp(origin_x + x, 0, s.w - 1);
            out[static_cast<std::size_t>(y) * size + x] = frame[static_cast<std::size_t>(sy) * s.w + sx];
        }
    }
    return out;
}

}  // namespace dastm
