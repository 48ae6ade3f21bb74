#include <benchmark/benchmark.h>

#include "ssdid/dgp.hpp"
#include "ssdid/estimator.hpp"
#include "ssdid/inference.hpp"

namespace {

ssdid::SimulatedPanel state_panel() {
  ssdid::DgpSpec spec;
  spec.n_units = 50;
  spec.T = 40;
  spec.r = 4;
  spec.signal = 0.8;
  spec.noise = ssdid::NoiseSpec::ar2(0.4, 0.15, 0.02);
  spec.assignment = ssdid::AssignmentSpec::confounded(20, 0.25, 2.5);
  spec.assignment.adopt_end = 32;
  spec.seed = 99;
  return ssdid::simulate(spec);
}

ssdid::SsdidConfig state_config(ssdid::EtaSpec eta) {
  ssdid::SsdidConfig cfg;
  cfg.a_min = 20;
  cfg.a_max = 32;
  cfg.k_max = 8;
  cfg.eta = eta;
  return cfg;
}

void BM_SequentialGrid(benchmark::State& state) {
  auto sim = state_panel();
  auto cfg = state_config(ssdid::EtaSpec::fixed(0.01));
  for (auto _ : state) {
    auto grid = ssdid::run_sequential(sim.aggregated, cfg);
    benchmark::DoNotOptimize(grid.tau_by_horizon.data());
  }
}
BENCHMARK(BM_SequentialGrid)->Unit(benchmark::kMillisecond);

void BM_SequentialGridInf(benchmark::State& state) {
  auto sim = state_panel();
  auto cfg = state_config(ssdid::EtaSpec::inf());
  for (auto _ : state) {
    auto grid = ssdid::run_sequential(sim.aggregated, cfg);
    benchmark::DoNotOptimize(grid.tau_by_horizon.data());
  }
}
BENCHMARK(BM_SequentialGridInf)->Unit(benchmark::kMillisecond);

void BM_BootstrapReplicates(benchmark::State& state) {
  auto sim = state_panel();
  auto cfg = state_config(ssdid::EtaSpec::fixed(0.01));
  ssdid::GridRunner runner = [cfg](const ssdid::CohortPanel& p) {
    return ssdid::run_sequential(p, cfg);
  };
  ssdid::BootstrapConfig bcfg;
  bcfg.B = static_cast<int>(state.range(0));
  bcfg.seed = 3;
  auto src = ssdid::PanelSource::from_units(sim.panel);
  for (auto _ : state) {
    auto res = ssdid::bootstrap(src, runner, bcfg);
    benchmark::DoNotOptimize(res.horizon_stats.data());
  }
}
BENCHMARK(BM_BootstrapReplicates)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
