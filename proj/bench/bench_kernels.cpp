// Parallel kernels against the serial reference on model-sized shapes.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "relformer/diff/kernels.hpp"

using namespace relformer::kernels;

namespace {

std::vector<float> Random(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Shapes: attention-sized, MLP-sized and the desk backbone's second conv
// as im2col, at batch 8.
GemmShape GemmCase(int i) {
  switch (i) {
    case 0: return {136, 128, 128};
    case 1: return {136, 512, 128};
    default: return {2048, 32, 144};
  }
}

template <bool kReference>
void BM_Gemm(benchmark::State& state) {
  const GemmShape s = GemmCase(static_cast<int>(state.range(0)));
  const auto a = Random(s.m * s.k, 1), b = Random(s.k * s.n, 2);
  std::vector<float> c(s.m * s.n);
  for (auto _ : state) {
    if constexpr (kReference) {
      reference::Gemm<float>(s, a, b, 0.0f, c);
    } else {
      Gemm<float>(s, a, b, 0.0f, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * 2 * s.m * s.n * s.k));
}

template <bool kReference>
void BM_Conv(benchmark::State& state) {
  ConvShape s;
  s.batch = 8;
  s.in_h = s.in_w = static_cast<std::size_t>(state.range(0));
  s.in_c = static_cast<std::size_t>(state.range(1));
  s.out_c = static_cast<std::size_t>(state.range(2));
  s.kernel = 3;
  s.stride = 2;
  s.pad = 1;
  const auto x = Random(s.batch * s.in_h * s.in_w * s.in_c, 3);
  const auto w = Random(s.patch() * s.out_c, 4), bias = Random(s.out_c, 5);
  std::vector<float> y(s.rows() * s.out_c);
  for (auto _ : state) {
    if constexpr (kReference) {
      reference::Conv2dForward<float>(s, x, w, bias, y);
    } else {
      Conv2dForward<float>(s, x, w, bias, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * 2 * s.rows() * s.patch() * s.out_c));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("Gemm/parallel")->DenseRange(0, 2);
BENCHMARK(BM_Gemm<true>)->Name("Gemm/reference")->DenseRange(0, 2);
BENCHMARK(BM_Conv<false>)->Name("Conv2d/parallel")->Args({64, 3, 16})->Args({32, 16, 32})->Args({16, 32, 64});
BENCHMARK(BM_Conv<true>)->Name("Conv2d/reference")->Args({64, 3, 16})->Args({32, 16, 32})->Args({16, 32, 64});

BENCHMARK_MAIN();
