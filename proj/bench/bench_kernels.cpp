// Serial reference vs OpenMP variants of the dense kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mpnflow/kernels.hpp"

namespace k = mpnflow::kernels;

namespace {

std::vector<double> random_values(std::size_t n) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

k::ConvGeometry geometry(benchmark::State& state) {
  k::ConvGeometry g;
  g.images = std::size_t(state.range(0));
  g.height = g.width = 8;
  g.in_channels = 8;
  return g;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  k::set_threads(int(state.range(1)));
  const std::size_t rows = std::size_t(state.range(0)), inner = 64, cols = 64;
  const auto a = random_values(rows * inner), b = random_values(inner * cols);
  std::vector<double> c(rows * cols);
  for (auto _ : state) {
    Gemm(a, b, c, rows, inner, cols);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(rows * inner * cols));
}

template <auto Im2col>
void BM_im2col(benchmark::State& state) {
  k::set_threads(int(state.range(1)));
  const auto g = geometry(state);
  const auto in = random_values(g.pixels() * g.in_channels);
  std::vector<double> cols(g.pixels() * g.patch());
  for (auto _ : state) {
    Im2col(in, cols, g);
    benchmark::DoNotOptimize(cols.data());
  }
}

template <auto Col2im>
void BM_col2im(benchmark::State& state) {
  k::set_threads(int(state.range(1)));
  const auto g = geometry(state);
  const auto cols = random_values(g.pixels() * g.patch());
  std::vector<double> in(g.pixels() * g.in_channels);
  for (auto _ : state) {
    Col2im(cols, in, g);
    benchmark::DoNotOptimize(in.data());
  }
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int n : {64, 1024}) {
    for (int t : {1, 2, 4}) b->Args({n, t});
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(sizes);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Apply(sizes);
BENCHMARK(BM_im2col<k::serial::im2col>)->Name("im2col/serial")->Apply(sizes);
BENCHMARK(BM_im2col<k::parallel::im2col>)->Name("im2col/parallel")->Apply(sizes);
BENCHMARK(BM_col2im<k::serial::col2im>)->Name("col2im/serial")->Apply(sizes);
BENCHMARK(BM_col2im<k::parallel::col2im>)->Name("col2im/parallel")->Apply(sizes);

BENCHMARK_MAIN();
