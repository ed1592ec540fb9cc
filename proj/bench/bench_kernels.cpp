// Serial reference kernels against their OpenMP counterparts, plus one
// end-to-end training step through the ops layer on each backend.

#include <benchmark/benchmark.h>

#include <vector>

#include "dastm/kernels.hpp"
#include "dastm/model.hpp"
#include "dastm/rng.hpp"
#include "dastm/scenes.hpp"
#include "dastm/autograd.hpp"
#include "dastm/trainer.hpp"

using namespace dastm;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1)),
              k = static_cast<int>(state.range(2));
    const auto a = random_values(static_cast<std::size_t>(m) * k, 1);
    const auto b = random_values(static_cast<std::size_t>(k) * n, 2);
    std::vector<double> c(static_cast<std::size_t>(m) * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::parallel::gemm(m, n, k, a, b, c, false);
        else
            kernels::serial::gemm(m, n, k, a, b, c, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * m * n * k);
}

kernels::ConvGeometry geometry(int cin, int size, int cout, int k, int stride, int pad) {
    kernels::ConvGeometry g;
    g.cin = cin;
    g.h = g.w = size;
    g.cout = cout;
    g.k = k;
    g.stride = stride;
    g.pad = pad;
    g.hout = g.wout = (size + 2 * pad - k) / stride + 1;
    return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
    const auto g = geometry(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                            static_cast<int>(state.range(2)), 3, 1, 1);
    const auto in = random_values(static_cast<std::size_t>(g.cin) * g.h * g.w, 3);
    const auto w = random_values(static_cast<std::size_t>(g.cout) * g.patch(), 4);
    const auto bias = random_values(g.cout, 5);
    std::vector<double> out(static_cast<std::size_t>(g.cout) * g.out_pixels());
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::parallel::conv2d_forward(g, in, w, bias, out);
        else
            kernels::serial::conv2d_forward(g, in, w, bias, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * g.cout * g.patch() * g.out_pixels());
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
    const auto g = geometry(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                            static_cast<int>(state.range(2)), 3, 1, 1);
    const auto in = random_values(static_cast<std::size_t>(g.cin) * g.h * g.w, 3);
    const auto w = random_values(static_cast<std::size_t>(g.cout) * g.patch(), 4);
    const auto gout = random_values(static_cast<std::size_t>(g.cout) * g.out_pixels(), 6);
    std::vector<double> gin(in.size()), gw(w.size()), gb(g.cout);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::parallel::conv2d_backward(g, in, w, gout, gin, gw, gb);
        else
            kernels::serial::conv2d_backward(g, in, w, gout, gin, gw, gb);
        benchmark::DoNotOptimize(gw.data());
    }
}

template <kernels::Backend B>
void BM_TrainStep(benchmark::State& state) {
    const kernels::Backend previous = kernels::backend();
    kernels::set_backend(B);
    const Sequence seq = generate(default_spec(1));
    TrainConfig cfg;
    Rng rng(1);
    std::vector<TrainSample> batch;
    for (int i = 0; i < cfg.batch; ++i) batch.push_back(draw_sample(seq, cfg, 64, rng));
    Model model(ModelConfig{}, 1);
    ParamSet params = model.parameters();
    for (auto _ : state) {
        Rng loss_rng(2);
        const Tensor4 loss = batch_loss(model, batch, cfg, loss_rng);
        benchmark::DoNotOptimize(backprop(loss, params));
        params.zero_grad();
    }
    kernels::set_backend(previous);
}

}  // namespace

// Shapes from the default model: backbone conv2 im2col GEMM, head 3x3 convs.
BENCHMARK(BM_Gemm<false>)->Args({32, 256, 256})->Args({16, 256, 288})->Args({64, 64, 64});
BENCHMARK(BM_Gemm<true>)->Args({32, 256, 256})->Args({16, 256, 288})->Args({64, 64, 64});
BENCHMARK(BM_ConvForward<false>)->Args({32, 16, 16})->Args({16, 32, 16});
BENCHMARK(BM_ConvForward<true>)->Args({32, 16, 16})->Args({16, 32, 16});
BENCHMARK(BM_ConvBackward<false>)->Args({32, 16, 16})->Args({16, 32, 16});
BENCHMARK(BM_ConvBackward<true>)->Args({32, 16, 16})->Args({16, 32, 16});
BENCHMARK(BM_TrainStep<kernels::Backend::serial>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep<kernels::Backend::parallel>)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
