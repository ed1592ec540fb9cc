#include "dastm/attention.hpp"

#include <cmath>

#include "dastm/error.hpp"
#include "dastm/ops.hpp"

namespace dastm {

namespace {

using namespace ops;

int reduced(int channels, int reduction) {
    if (reduction < 1) throw ConfigError("attention reduction must be >= 1");
    if (channels % reduction != 0)
        throw ConfigError("channels " + std::to_string(channels) + " not divisible by reduction " +
                          std::to_string(reduction));
    return channels / reduction;
}

void check_channels(const Tensor4& x, int channels, const char* what) {
    if (x.shape().c != channels)
        throw DimensionError(std::string(what) + " expects " + std::to_string(channels) + " channels, got " +
                             std::to_string(x.shape().c));
}

Tensor4 param(Shape s) { return Tensor4(s, 0.0, true); }

}  // namespace

Tensor4 random_weight(Shape shape, double fan_in, Rng& rng) {
    Tensor4 t(shape, 0.0, true);
    const double sd = std::sqrt(2.0 / fan_in);
    for (double& v : t.data()) v = sd * rng.normal();
    return t;
}

SEParams SEParams::zeros(int channels, int reduction) {
    const int m = reduced(channels, reduction);
    return {channels, reduction, param({m, channels, 1, 1}), param({1, m, 1, 1}), param({channels, m, 1, 1}),
            param({1, channels, 1, 1})};
}

SEParams SEParams::random(int channels, int reduction, Rng& rng) {
    SEParams p = zeros(channels, reduction);
    const int m = reduced(channels, reduction);
    p.w1 = random_weight({m, channels, 1, 1}, channels, rng);
    p.w2 = random_weight({channels, m, 1, 1}, m, rng);
    return p;
}

void SEParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
}

CAParams CAParams::zeros(int channels, int reduction) {
    const int m = reduced(channels, reduction);
    return {channels,
            reduction,
            param({m, channels, 1, 1}),
            param({1, m, 1, 1}),
            param({channels, m, 1, 1}),
            param({1, channels, 1, 1}),
            param({channels, m, 1, 1}),
            param({1, channels, 1, 1})};
}

CAParams CAParams::random(int channels, int reduction, Rng& rng) {
    CAParams p = zeros(channels, reduction);
    const int m = reduced(channels, reduction);
    p.shared_w = random_weight({m, channels, 1, 1}, channels, rng);
    p.h_w = random_weight({channels, m, 1, 1}, m, rng);
    p.w_w = random_weight({channels, m, 1, 1}, m, rng);
    return p;
}

void CAParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".conv_shared.w", shared_w);
    fn(prefix + ".conv_shared.b", shared_b);
    fn(prefix + ".conv_h.w", h_w);
    fn(prefix + ".conv_h.b", h_b);
    fn(prefix + ".conv_w.w", w_w);
    fn(prefix + ".conv_w.b", w_b);
}

CBAMParams CBAMParams::zeros(int channels, int reduction) {
    const int m = reduced(channels, reduction);
    return {channels,
            reduction,
            param({m, channels, 1, 1}),
            param({1, m, 1, 1}),
            param({channels, m, 1, 1}),
            param({1, channels, 1, 1}),
            param({1, 2, kSpatialKernel, kSpatialKernel}),
            param({1, 1, 1, 1})};
}

CBAMParams CBAMParams::random(int channels, int reduction, Rng& rng) {
    CBAMParams p = zeros(channels, reduction);
    const int m = reduced(channels, reduction);
    p.w1 = random_weight({m, channels, 1, 1}, channels, rng);
    p.w2 = random_weight({channels, m, 1, 1}, m, rng);
    p.spatial_w = random_weight({1, 2, kSpatialKernel, kSpatialKernel}, 2.0 * kSpatialKernel * kSpatialKernel, rng);
    return p;
}

void CBAMParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".mlp.w1", w1);
    fn(prefix + ".mlp.b1", b1);
    fn(prefix + ".mlp.w2", w2);
    fn(prefix + ".mlp.b2", b2);
    fn(prefix + ".spatial.w", spatial_w);
    fn(prefix + ".spatial.b", spatial_b);
}

Tensor4 se_forward(const Tensor4& x, const SEParams& p) {
    check_channels(x, p.channels, "se_forward");
    const Tensor4 squeezed = pool(PoolKind::global_avg, x);
    const Tensor4 hidden = relu(linear(squeezed, p.w1, p.b1));
    const Tensor4 gate = sigmoid(linear(hidden, p.w2, p.b2));
    return mul(x, gate);
}

Tensor4 ca_forward(const Tensor4& x, const CAParams& p) {
    check_channels(x, p.channels, "ca_forward");
    const Shape& s = x.shape();
    const Tensor4 zh = pool(PoolKind::avg_over_w, x);                                     // (n,c,h,1)
    const Tensor4 zw = reshape(pool(PoolKind::avg_over_h, x), {s.n, s.c, s.w, 1});      // (n,c,w,1)
    const Tensor4 joint = combine(CombineKind::concat_spatial, zh, zw);                  // (n,c,h+w,1)
    const Tensor4 mixed = relu(conv2d(joint, p.shared_w, p.shared_b, 1, 0));
    const Tensor4 gh = sigmoid(conv2d(slice(mixed, Axis::h, 0, s.h), p.h_w, p.h_b, 1, 0));
    const Tensor4 gw_col = sigmoid(conv2d(slice(mixed, Axis::h, s.h, s.w), p.w_w, p.w_b, 1, 0));
    const Tensor4 gw = reshape(gw_col, {s.n, s.c, 1, s.w});
    return mul(mul(x, gh), gw);
}

Tensor4 cbam_forward(const Tensor4& x, const CBAMParams& p) {
    check_channels(x, p.channels, "cbam_forward");
    auto mlp = [&](const Tensor4& v) { return linear(relu(linear(v, p.w1, p.b1)), p.w2, p.b2); };
    const Tensor4 channel_gate =
        sigmoid(add(mlp(pool(PoolKind::global_avg, x)), mlp(pool(PoolKind::global_max, x))));
    const Tensor4 refined = mul(x, channel_gate);
    const Tensor4 descriptor = combine(CombineKind::concat_channel, pool(PoolKind::mean_over_c, refined),
                                       pool(PoolKind::max_over_c, refined));
    const Tensor4 spatial_gate =
        sigmoid(conv2d(descriptor, p.spatial_w, p.spatial_b, 1, CBAMParams::kSpatialKernel / 2));
    return mul(refined, spatial_gate);
}

}  // namespace dastm
