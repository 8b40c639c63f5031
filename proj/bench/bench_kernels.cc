#include <benchmark/benchmark.h>

#include <vector>

#include "pneunet/kernels.h"
#include "pneunet/random.h"

using namespace pneunet;
using namespace pneunet::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Stage-2 shape of the default backbone on a batch of 16 64x64 images.
ConvGeometry stage_geometry(std::size_t batch) { return {batch, 8, 16, 16, 16, 3, 3, 1, 1}; }

template <bool kParallel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = stage_geometry(static_cast<std::size_t>(state.range(0)));
  const auto in = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2),
             b = random_vec(g.out_channels, 3);
  std::vector<float> out(g.output_size());
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::conv2d_forward<float>(g, in, w, b, out);
    } else {
      reference::conv2d_forward<float>(g, in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.batch));
}

template <bool kParallel>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = stage_geometry(static_cast<std::size_t>(state.range(0)));
  const auto in = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2),
             go = random_vec(g.output_size(), 3);
  std::vector<float> gi(g.input_size()), gw(g.weight_size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
    } else {
      reference::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.batch));
}

template <bool kParallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::matmul<float>(a, b, c, n, n, n);
    } else {
      reference::matmul<float>(a, b, c, n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Arg(1)->Arg(16);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(1)->Arg(16);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Arg(1)->Arg(16);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Arg(1)->Arg(16);
BENCHMARK(BM_Matmul<false>)->Name("matmul/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(64)->Arg(256);

BENCHMARK_MAIN();
