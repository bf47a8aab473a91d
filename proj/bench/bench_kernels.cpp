// Serial reference vs OpenMP kernels; second argument 0 = serial, 1 = OpenMP.
// OWATTR_THREADS pins the pool size.

#include <benchmark/benchmark.h>

#include <vector>

#include "owattr/kernels.hpp"
#include "owattr/model.hpp"
#include "owattr/rng.hpp"

using namespace owattr;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

kernels::Exec exec_of(const benchmark::State& state) {
  return state.range(1) ? kernels::Exec::parallel : kernels::Exec::serial;
}

void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 64, n = 64;
  const auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if (state.range(1)) kernels::gemm_omp(false, false, m, n, k, a, b, c);
    else kernels::gemm_serial(false, false, m, n, k, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(m));
}

void BM_DctRows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t side = 16;
  const auto in = noise(rows * side * side, 3);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if (state.range(1)) kernels::dct_rows_omp(in, out, rows, side, side, false);
    else kernels::dct_rows_serial(in, out, rows, side, side, false);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows));
}

void BM_SoftmaxRows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 50;
  const auto in = noise(rows * cols, 4);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if (state.range(1)) kernels::softmax_rows_omp(in, out, rows, cols, 10.0);
    else kernels::softmax_rows_serial(in, out, rows, cols, 10.0);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows));
}

void BM_Infer(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  SeededRng rng(5);
  const Model model = Model::create(ModelConfig{}, 256, 16, 5, 50, rng);
  const Tensor x({rows, 256}, noise(rows * 256, 6));
  for (auto _ : state) benchmark::DoNotOptimize(infer(model, x, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows));
}

}  // namespace

BENCHMARK(BM_Gemm)->ArgsProduct({{128, 1024, 4096}, {0, 1}});
BENCHMARK(BM_DctRows)->ArgsProduct({{64, 1024}, {0, 1}});
BENCHMARK(BM_SoftmaxRows)->ArgsProduct({{128, 4096}, {0, 1}});
BENCHMARK(BM_Infer)->ArgsProduct({{256, 2048}, {0, 1}});

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
