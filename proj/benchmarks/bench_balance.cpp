#include <benchmark/benchmark.h>

#include "ssdid/balance.hpp"
#include "ssdid/rng.hpp"

namespace {

ssdid::RidgeBalanceProblem make_problem(int rows, int cols, double eta) {
  ssdid::CounterRng rng(42, 0xbe);
  ssdid::RidgeBalanceProblem p;
  p.predictors.resize(rows, cols);
  p.target.resize(rows);
  p.penalty_diag.resize(cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) p.predictors(i, j) = rng.next_normal();
    p.target(i) = rng.next_normal();
  }
  for (int j = 0; j < cols; ++j) p.penalty_diag(j) = 1.0 + rng.next_u01();
  p.eta = ssdid::Eta::value(eta);
  return p;
}

void BM_RidgeBalance(benchmark::State& state) {
  auto p = make_problem(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 0.1);
  for (auto _ : state) {
    auto w = ssdid::solve_ridge_balance(p);
    benchmark::DoNotOptimize(w.weights.data());
  }
}
BENCHMARK(BM_RidgeBalance)->Args({10, 5})->Args({30, 15})->Args({40, 45});

void BM_ExactBalance(benchmark::State& state) {
  ssdid::CounterRng rng(7, 0xeb);
  int cols = static_cast<int>(state.range(0));
  ssdid::ExactBalanceProblem p;
  p.moment_matrix.resize(3, cols);
  p.moment_matrix.row(0).setOnes();
  for (int j = 0; j < cols; ++j) {
    p.moment_matrix(1, j) = rng.next_normal();
    p.moment_matrix(2, j) = rng.next_normal();
  }
  Eigen::VectorXd feasible = Eigen::VectorXd::Constant(cols, 1.0 / cols);
  p.moment_target = p.moment_matrix * feasible;
  p.penalty_diag = Eigen::VectorXd::Ones(cols);
  for (auto _ : state) {
    auto w = ssdid::solve_exact_balance(p);
    benchmark::DoNotOptimize(w.weights.data());
  }
}
BENCHMARK(BM_ExactBalance)->Arg(8)->Arg(24)->Arg(48);

}  // namespace
