// Serial reference kernels against their OpenMP twins.

#include <benchmark/benchmark.h>

#include "kbcf/parallel.hpp"
#include "kbcf/rng.hpp"

using namespace kbcf;

namespace {

Matrix random_rows(Eigen::Index n, Eigen::Index dim) {
  Rng rng(1);
  Matrix m(n, dim);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

FactorizationModel random_model(int users, int items) {
  Rng rng(2);
  return FactorizationModel::random(users, items, 16, Link::sigmoid, rng, 0.1);
}

template <Matrix (*Fn)(const KernelSpec&, const Matrix&)>
void BM_Gram(benchmark::State& state) {
  const Matrix rows = random_rows(state.range(0), 16);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(KernelSpec{}, rows));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

template <Matrix (*Fn)(const KernelSpec&, const Matrix&, const Matrix&)>
void BM_KernelColumns(benchmark::State& state) {
  const Matrix points = random_rows(state.range(0), 16);
  const Matrix centers = random_rows(32, 16);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(KernelSpec{}, points, centers));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 32);
}

template <Matrix (*Fn)(const FactorizationModel&)>
void BM_PredictGrid(benchmark::State& state) {
  const auto side = static_cast<int>(state.range(0));
  const FactorizationModel model = random_model(side, side);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(model));
  state.SetItemsProcessed(state.iterations() * side * side);
}

}  // namespace

BENCHMARK(BM_Gram<parallel::gram_entries_serial>)->Name("gram/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Gram<parallel::gram_entries>)->Name("gram/openmp")->Arg(256)->Arg(1024);
BENCHMARK(BM_KernelColumns<parallel::kernel_columns_serial>)->Name("kernel_columns/serial")->Arg(10000);
BENCHMARK(BM_KernelColumns<parallel::kernel_columns>)->Name("kernel_columns/openmp")->Arg(10000);
BENCHMARK(BM_PredictGrid<parallel::predict_grid_serial>)->Name("predict_grid/serial")->Arg(300);
BENCHMARK(BM_PredictGrid<parallel::predict_grid>)->Name("predict_grid/openmp")->Arg(300);

BENCHMARK_MAIN();
