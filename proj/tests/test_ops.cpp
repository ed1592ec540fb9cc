#include <doctest.h>

#include <cmath>
#include <functional>

#include "dastm/autograd.hpp"
#include "dastm/error.hpp"
#include "dastm/ops.hpp"
#include "helpers.hpp"

using namespace dastm;
using namespace dastm::ops;
using dastm::test::random_tensor;

namespace {

// Direct nested-loop cross-correlation.
Tensor4 conv_oracle(const Tensor4& x, const Tensor4& w, const Tensor4& b, int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const int ho = (xs.h + 2 * pad - ws.h) / stride + 1, wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor4 y({xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < ws.n; ++o)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    double s = b.numel() ? b[o] : 0.0;
                    for (int c = 0; c < xs.c; ++c)
                        for (int ky = 0; ky < ws.h; ++ky)
                            for (int kx = 0; kx < ws.w; ++kx) {
                                const int iy = i * stride - pad + ky, ix = j * stride - pad + kx;
                                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                                s += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
                            }
                    y.at(n, o, i, j) = s;
                }
    return y;
}

// Scalar objective sum(probe * f(inputs)) checked against central differences.
double check(const std::function<Tensor4()>& out, ParamSet& params, Rng& rng) {
    const Tensor4 first = out();
    const Tensor4 weights = random_tensor(first.shape(), rng);
    return grad_check([&] { return sum(mul(out(), weights)); }, params, 1e-5);
}

}  // namespace

TEST_CASE("conv2d matches hand-summed 2x2 example") {
    const Tensor4 x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor4 w({1, 1, 2, 2}, 1.0);
    const Tensor4 y = conv2d(x, w, Tensor4({1, 1, 1, 1}, 0.0), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.values() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d identity kernel and bias-only output") {
    Rng rng(3);
    const Tensor4 x = random_tensor({2, 3, 5, 4}, rng);
    Tensor4 eye({3, 3, 1, 1}, 0.0);
    for (int c = 0; c < 3; ++c) eye.at(c, c, 0, 0) = 1.0;
    CHECK(test::max_abs_diff(conv2d(x, eye, Tensor4(), 1, 0), x) == 0.0);

    const Tensor4 zero({1, 2, 6, 6}, 0.0);
    const Tensor4 bias({1, 3, 1, 1}, {0.5, -1.0, 2.0});
    const Tensor4 y = conv2d(zero, random_tensor({3, 2, 3, 3}, rng), bias, 1, 1);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) CHECK(y.at(0, c, i, j) == bias[c]);
}

TEST_CASE("conv2d agrees with the nested-loop oracle on random geometries") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 1 + static_cast<int>(rng.below(4));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        const int cin = 1 + static_cast<int>(rng.below(3)), cout = 1 + static_cast<int>(rng.below(3));
        int h = k + static_cast<int>(rng.below(6));
        int w = k + static_cast<int>(rng.below(6));
        h += (h + 2 * pad - k) % stride == 0 ? 0 : stride - (h + 2 * pad - k) % stride;
        w += (w + 2 * pad - k) % stride == 0 ? 0 : stride - (w + 2 * pad - k) % stride;
        const Tensor4 x = random_tensor({2, cin, h, w}, rng);
        const Tensor4 wt = random_tensor({cout, cin, k, k}, rng);
        const Tensor4 b = random_tensor({1, cout, 1, 1}, rng);
        CHECK(test::max_abs_diff(conv2d(x, wt, b, stride, pad), conv_oracle(x, wt, b, stride, pad)) < 1e-12);
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    const Tensor4 x({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, Tensor4({1, 3, 3, 3}), Tensor4(), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor4({1, 2, 2, 2}), Tensor4(), 2, 0), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor4({1, 2, 7, 7}), Tensor4(), 1, 0), ConfigError);
}

TEST_CASE("linear examples") {
    const Tensor4 x({1, 2, 1, 1}, {1, 2});
    const Tensor4 w({2, 2, 1, 1}, {1, 1, 0, 1});
    const Tensor4 b({1, 2, 1, 1}, {0, 1});
    CHECK(linear(x, w, b).values() == std::vector<double>{3, 3});
    CHECK(linear(Tensor4({1, 2, 1, 1}, 0.0), w, b).values() == std::vector<double>{0, 1});
    CHECK_THROWS_AS(linear(Tensor4({1, 3, 1, 1}), w, b), DimensionError);
}

TEST_CASE("activations") {
    const Tensor4 x({1, 3, 1, 1}, {-1, 0, 2});
    CHECK(relu(x).values() == std::vector<double>{0, 0, 2});
    CHECK(sigmoid(Tensor4({1, 1, 1, 1}, 0.0)).item() == 0.5);
    CHECK(sigmoid(Tensor4({1, 1, 1, 1}, std::log(3.0))).item() == doctest::Approx(0.75).epsilon(1e-14));
    const Tensor4 big({1, 2, 1, 1}, {-800.0, 800.0});
    const Tensor4 s = sigmoid(big);
    CHECK(std::isfinite(s[0]));
    CHECK(s[1] == 1.0);
}

TEST_CASE("temperature softmax") {
    const Tensor4 s({1, 3, 1, 1}, {1, 2, 3});
    const Tensor4 k = softmax(s, Axis::c, 1.0);
    CHECK(k[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(k[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(k[2] == doctest::Approx(0.66524096).epsilon(1e-7));
    const Tensor4 k2 = softmax(Tensor4({1, 2, 1, 1}, {1, 2}), Axis::c, 0.5);
    CHECK(k2[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-12));
    CHECK(k2[1] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
    CHECK_THROWS_AS(softmax(s, Axis::c, 0.0), ParameterError);
    const Tensor4 huge = softmax(Tensor4({1, 2, 1, 1}, {1000.0, 0.0}), Axis::c, 1.0);
    CHECK(huge[0] == 1.0);
}

TEST_CASE("pools") {
    const Tensor4 x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 9, 9, 0});
    CHECK(pool(PoolKind::global_avg, x).values() == std::vector<double>{2.5, 5.75});
    CHECK(pool(PoolKind::global_max, x).values() == std::vector<double>{4, 9});
    CHECK(pool(PoolKind::avg_over_w, x).values() == std::vector<double>{1.5, 3.5, 7, 4.5});
    CHECK(pool(PoolKind::avg_over_h, x).values() == std::vector<double>{2, 3, 7, 4.5});
    CHECK(pool(PoolKind::mean_over_c, x).values() == std::vector<double>{3, 5.5, 6, 2});
    CHECK(pool(PoolKind::max_over_c, x).values() == std::vector<double>{5, 9, 9, 4});

    // Ties route the gradient to the first maximum only.
    Tensor4 t({1, 1, 1, 3}, {2, 2, 1}, true);
    backward(sum(pool(PoolKind::global_max, t)));
    CHECK(std::vector<double>(t.grad().begin(), t.grad().end()) == std::vector<double>{1, 0, 0});
}

TEST_CASE("combine kinds") {
    const Tensor4 a({1, 2, 1, 2}, {1, 2, 3, 4});
    const Tensor4 b({1, 2, 1, 1}, {10, 100});
    CHECK(mul(a, b).values() == std::vector<double>{10, 20, 300, 400});
    CHECK(add(a, a).values() == std::vector<double>{2, 4, 6, 8});
    CHECK(combine(CombineKind::concat_channel, a, a).shape() == Shape{1, 4, 1, 2});
    const Tensor4 cs = combine(CombineKind::concat_spatial, a, a);
    CHECK(cs.shape() == Shape{1, 2, 2, 2});
    CHECK(cs.values() == std::vector<double>{1, 2, 1, 2, 3, 4, 3, 4});
    CHECK_THROWS_AS(add(a, b), DimensionError);
}

TEST_CASE("backprop returns zeros for unreachable parameters and rejects non-scalars") {
    ParamSet ps;
    ps.add("a", Tensor4({1, 2, 1, 1}, {1, 2}, true));
    ps.add("unused", Tensor4({1, 1, 1, 1}, 3.0, true));
    const auto g = backprop(sum(scale(ps.get("a"), 3.0)), ps);
    CHECK(g[0] == std::vector<double>{3, 3});
    CHECK(g[1] == std::vector<double>{0});
    CHECK_THROWS_AS(backward(ps.get("a")), DimensionError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Tensor4 a({1, 1, 1, 1}, 2.0, true);
    {
        const NoGradGuard guard;
        CHECK_FALSE(scale(a, 2.0).requires_grad());
    }
    CHECK(scale(a, 2.0).requires_grad());
}

TEST_CASE("every differentiable op passes the central-difference check") {
    Rng rng(2024);
    for (int trial = 0; trial < 4; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 3 + static_cast<int>(rng.below(3));
        const int w = 3 + static_cast<int>(rng.below(3));
        ParamSet ps;
        ps.add("x", random_tensor({n, c, h, w}, rng, true));
        ps.add("y", random_tensor({n, c, h, w}, rng, true));
        ps.add("g", random_tensor({1, c, 1, 1}, rng, true));
        ps.add("k", random_tensor({2, c, 3, 3}, rng, true));
        ps.add("kb", random_tensor({1, 2, 1, 1}, rng, true));
        ps.add("W", random_tensor({3, c, 1, 1}, rng, true));
        ps.add("b", random_tensor({1, 3, 1, 1}, rng, true));
        ps.add("m", random_tensor({n, 1, h, w}, rng, true));
        ps.add("q", random_tensor({n, 1, w, 3}, rng, true));
        const Tensor4& x = ps.get("x");
        const Tensor4& y = ps.get("y");
        CAPTURE(trial);
        CHECK(check([&] { return conv2d(x, ps.get("k"), ps.get("kb"), 1, 1); }, ps, rng) < 1e-4);
        CHECK(check([&] { return conv2d(x, ps.get("k"), Tensor4(), 1, 0); }, ps, rng) < 1e-4);
        CHECK(check([&] { return linear(pool(PoolKind::global_avg, x), ps.get("W"), ps.get("b")); }, ps, rng) < 1e-4);
        CHECK(check([&] { return sigmoid(x); }, ps, rng) < 1e-4);
        CHECK(check([&] { return relu(x); }, ps, rng) < 1e-4);
        CHECK(check([&] { return exponential(x); }, ps, rng) < 1e-4);
        CHECK(check([&] { return softmax(x, Axis::c, 0.7); }, ps, rng) < 1e-4);
        CHECK(check([&] { return softmax(x, Axis::h, 1.3); }, ps, rng) < 1e-4);
        CHECK(check([&] { return softmax(x, Axis::w, 1.0); }, ps, rng) < 1e-4);
        for (PoolKind k : {PoolKind::global_avg, PoolKind::global_max, PoolKind::avg_over_w, PoolKind::avg_over_h,
                           PoolKind::mean_over_c, PoolKind::max_over_c})
            CHECK(check([&] { return pool(k, x); }, ps, rng) < 1e-4);
        CHECK(check([&] { return mul(x, ps.get("g")); }, ps, rng) < 1e-4);
        CHECK(check([&] { return mul(x, y); }, ps, rng) < 1e-4);
        CHECK(check([&] { return add(x, y); }, ps, rng) < 1e-4);
        CHECK(check([&] { return combine(CombineKind::concat_channel, x, y); }, ps, rng) < 1e-4);
        CHECK(check([&] { return combine(CombineKind::concat_spatial, x, y); }, ps, rng) < 1e-4);
        CHECK(check([&] { return slice(x, Axis::h, 1, 1); }, ps, rng) < 1e-4);
        CHECK(check([&] { return transpose_hw(x); }, ps, rng) < 1e-4);
        CHECK(check([&] { return reshape(x, {n, 1, c * h, w}); }, ps, rng) < 1e-4);
        CHECK(check([&] { return matmul(slice(x, Axis::c, 0, 1), ps.get("q")); }, ps, rng) < 1e-4);
        CHECK(check([&] { return scale(x, -2.5); }, ps, rng) < 1e-4);
        Tensor4 targets({n, 1, h, w});
        for (std::size_t i = 0; i < targets.numel(); ++i) targets[i] = rng.uniform();
        const Tensor4 mask({n, 1, h, w}, 1.0);
        CHECK(check([&] { return bce_with_logits(ps.get("m"), targets, mask); }, ps, rng) < 1e-4);
        CHECK(check([&] { return bce_with_logits(ps.get("m"), targets, mask, true); }, ps, rng) < 1e-4);
    }
}

TEST_CASE("iou loss gradient and value") {
    // Boxes (l,t,r,b) = (1,1,1,1) vs (2,2,2,2): IoU = 4/16.
    const Tensor4 pred({1, 4, 1, 1}, 1.0), target({1, 4, 1, 1}, 2.0), mask({1, 1, 1, 1}, 1.0);
    CHECK(iou_loss(pred, target, mask).item() == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(iou_loss(pred, target, Tensor4({1, 1, 1, 1}, 0.0)).item() == 0.0);

    Rng rng(5);
    ParamSet ps;
    std::vector<double> v(4 * 9);
    for (double& x : v) x = rng.uniform(0.5, 3.0);
    ps.add("p", Tensor4({1, 4, 3, 3}, v, true));
    Tensor4 t({1, 4, 3, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.5, 3.0);
    Tensor4 m({1, 1, 3, 3});
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] = i % 2 == 0 ? 1.0 : 0.0;
    CHECK(grad_check([&] { return iou_loss(ps.get("p"), t, m); }, ps, 1e-5) < 1e-4);
}
