// Acceptance suite: one numbered check per release criterion, each printing a
// single PASS/FAIL line with its measured quantities and runtime.
//
//   acceptance            runs everything
//   acceptance --only N   runs one criterion
//   acceptance --list     lists criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "builders.hpp"
#include "ssdid/dgp.hpp"
#include "ssdid/estimator.hpp"
#include "ssdid/inference.hpp"
#include "ssdid/oracle.hpp"
#include "ssdid/placebo.hpp"
#include "ssdid/rng.hpp"
#include "test_oracles.hpp"

using namespace ssdid;
using testsupport::InstanceOptions;
using testsupport::make_aggregate_instance;

namespace {

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<bool(std::ostream&)> run;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1. Sequential OLS == joint OLS on random identified instances.
// ---------------------------------------------------------------------------

bool criterion_equivalence(std::ostream& log) {
  int done = 0;
  double worst = 0.0;
  std::uint64_t seed = 1;
  while (done < 100) {
    int r = done % 4;
    int n_rows = 3 + (done / 4) % 4;
    if (r > n_rows - 2) {
      r = n_rows - 2;  // keep enough late series to span the loadings
    }
    int T = 6 + (done / 16) % 7;
    if (T < r + 4) T = r + 4;
    bool with_noise = done % 2 == 1;

    int n_never = r + 1;
    int n_treated = n_rows - n_never;
    InstanceOptions opt;
    opt.T = T;
    opt.r = r;
    opt.noise_sd = with_noise ? 0.4 : 0.0;
    opt.heterogeneous_tau = true;
    opt.seed = seed++;
    // Treated adoptions spread over [r+2, T-1]; the rest never treated.
    for (int i = 0; i < n_treated; ++i) {
      auto span = static_cast<AdoptionTime>(T - 1 - (r + 2));
      AdoptionTime a = r + 2 + (span > 0 ? static_cast<AdoptionTime>((opt.seed * 7 + i * 3) %
                                                                     (span + 1))
                                         : 0);
      opt.adoptions.push_back(a);
    }
    std::sort(opt.adoptions.begin(), opt.adoptions.end());
    for (int i = 0; i < n_never; ++i) opt.adoptions.push_back(kNeverTreated);

    auto inst = make_aggregate_instance(opt);
    auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
    if (!bounds) continue;
    if (!check_affine_hull(inst.factors, inst.panel, *bounds).ok) continue;

    EstimateGrid seq = run_sequential_ols(inst.panel, inst.factors, *bounds);
    if (seq.cells.empty()) continue;
    EstimateGrid joint = run_joint_ols(inst.panel, inst.factors, *bounds);
    for (const auto& cell : seq.cells) {
      const CellEstimate* other = joint.find(cell.row, cell.horizon);
      if (!other) return false;
      worst = std::max(worst, std::abs(cell.tau_hat - other->tau_hat));
    }
    ++done;
  }
  log << "instances=" << done << " max|seq-joint|=" << worst;
  return worst <= 1e-8;
}

// ---------------------------------------------------------------------------
// 2. Two-way reduction: INF SSDiD == sequential OLS == plain imputation DiD.
// ---------------------------------------------------------------------------

bool criterion_two_way(std::ostream& log) {
  InstanceOptions opt;
  opt.adoptions = {3, 4, 6, kNeverTreated};
  opt.T = 9;
  opt.r = 0;
  opt.noise_sd = 0.5;
  opt.heterogeneous_tau = true;
  opt.seed = 404;
  auto inst = make_aggregate_instance(opt);

  SsdidConfig cfg;
  cfg.a_min = 3;
  cfg.a_max = 6;
  cfg.k_max = 3;
  cfg.eta = EtaSpec::inf();
  EstimateGrid did = run_sequential(inst.panel, cfg);

  auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
  if (!bounds) return false;
  EstimateGrid oracle = run_sequential_ols(inst.panel, inst.factors, *bounds);
  auto plain = testsupport::plain_did_imputation(inst.panel, 3, 6, 3);

  double worst = 0.0;
  for (const auto& cell : did.cells) {
    const CellEstimate* o = oracle.find(cell.row, cell.horizon);
    if (!o) return false;
    worst = std::max(worst, std::abs(cell.tau_hat - o->tau_hat));
    auto it = std::find(plain.cohorts.begin(), plain.cohorts.end(), cell.cohort);
    double p = plain.tau[static_cast<size_t>(it - plain.cohorts.begin())]
                        [static_cast<size_t>(cell.horizon)];
    worst = std::max(worst, std::abs(cell.tau_hat - p));
  }
  log << "cells=" << did.cells.size() << " max deviation=" << worst;
  return worst <= 1e-10;
}

// ---------------------------------------------------------------------------
// 3. Exact recovery at zero noise; error shrinks as eta drops.
// ---------------------------------------------------------------------------

bool criterion_zero_noise(std::ostream& log) {
  InstanceOptions opt;
  opt.adoptions = {4, 5, 6, kNeverTreated, kNeverTreated, kNeverTreated};
  opt.T = 12;
  opt.r = 2;
  opt.noise_sd = 0.0;
  opt.heterogeneous_tau = true;
  opt.seed = 1215;
  auto inst = make_aggregate_instance(opt);

  auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
  if (!bounds) return false;
  EstimateGrid oracle = run_sequential_ols(inst.panel, inst.factors, *bounds);
  double oracle_err = 0.0;
  for (const auto& cell : oracle.cells) {
    oracle_err = std::max(oracle_err, std::abs(cell.tau_hat - inst.tau(cell.cohort, cell.horizon)));
  }

  auto ssdid_max_err = [&](double eta) {
    SsdidConfig cfg;
    cfg.a_min = 4;
    cfg.a_max = 6;
    cfg.k_max = 6;
    cfg.eta = EtaSpec::fixed(eta);
    EstimateGrid grid = run_sequential(inst.panel, cfg);
    double err = 0.0;
    for (const auto& cell : grid.cells) {
      err = std::max(err, std::abs(cell.tau_hat - inst.tau(cell.cohort, cell.horizon)));
    }
    return err;
  };
  double e2 = ssdid_max_err(1e-2);
  double e4 = ssdid_max_err(1e-4);
  double e6 = ssdid_max_err(1e-6);

  log << "oracle=" << oracle_err << " ssdid(1e-2)=" << e2 << " ssdid(1e-4)=" << e4
      << " ssdid(1e-6)=" << e6;
  return oracle_err <= 1e-10 && e6 <= 1e-4 && e2 >= e4 && e4 >= e6;
}

// ---------------------------------------------------------------------------
// 4. sqrt(n)-scaled gap to the oracle shrinks with n.
// ---------------------------------------------------------------------------

bool criterion_convergence(std::ostream& log) {
  const AdoptionTime target_cohort = 5;
  auto gap_median = [&](long n) {
    std::vector<double> gaps;
    for (int rep = 0; rep < 50; ++rep) {
      DgpSpec spec;
      spec.n_units = n;
      spec.T = 10;
      spec.r = 2;
      spec.signal = 0.8;
      spec.noise = NoiseSpec::iid(0.5);
      spec.assignment = AssignmentSpec::independent(5, 8, 0.3);
      spec.assignment.loading_shift = 1.0;  // strong cohort-level factors
      spec.seed = 9000 + static_cast<std::uint64_t>(rep) * 13 + static_cast<std::uint64_t>(n);
      SimulatedPanel sim = simulate(spec);

      SsdidConfig cfg;
      cfg.a_min = target_cohort;
      cfg.a_max = target_cohort;
      cfg.k_max = 0;
      cfg.eta = EtaSpec::fixed(default_eta(sim.panel).eta);
      EstimateGrid ssdid_grid = run_sequential(sim.aggregated, cfg);

      auto bounds = tightest_oracle_bounds(sim.factors, sim.aggregated);
      if (!bounds || bounds->t_star > target_cohort) continue;
      EstimateGrid oracle = run_sequential_ols(sim.aggregated, sim.factors, *bounds);
      double gap = std::abs(ssdid_grid.tau(target_cohort, 0) - oracle.tau(target_cohort, 0));
      gaps.push_back(std::sqrt(static_cast<double>(n)) * gap);
    }
    return median(gaps);
  };

  double g3 = gap_median(1000);
  double g4 = gap_median(10000);
  double g5 = gap_median(100000);
  log << "median sqrt(n)*gap: n=1e3 " << g3 << ", n=1e4 " << g4 << ", n=1e5 " << g5;
  return g3 > g4 && g4 > g5;
}

// ---------------------------------------------------------------------------
// 5 & 6. Confounded state-panel analog: coverage/RMSE orderings, t centering.
// ---------------------------------------------------------------------------

DgpSpec confounded_spec() {
  DgpSpec spec;
  spec.n_units = 50;
  spec.T = 40;
  spec.r = 4;
  spec.signal = 0.8;
  spec.factor_trend = 1.8;  // adoption selects on exposure to a trending factor
  spec.never_groups = 6;    // quantile never-treated control series
  spec.noise = NoiseSpec::ar2(0.4, 0.15, 0.02);
  spec.assignment = AssignmentSpec::confounded(20, 0.45, 5.0);
  spec.assignment.adopt_end = 32;
  spec.assignment.date_sd = 1.5;
  spec.tau.constant = 0.05;
  spec.seed = 1912;
  return spec;
}

MonteCarloSummary run_confounded_mc() {
  DgpSpec spec = confounded_spec();
  SsdidConfig cfg;
  cfg.a_min = 20;
  cfg.a_max = 32;
  cfg.k_max = 8;
  cfg.eta = EtaSpec::auto_rule();

  MonteCarloConfig mc;
  mc.reps = 200;
  mc.threads = 2;
  mc.bootstrap.B = 100;
  mc.estimators = {{"SSDID", EstimatorKind::ssdid, cfg}, {"DID", EstimatorKind::seq_did, cfg}};
  return monte_carlo(spec, mc);
}

bool criterion_coverage(std::ostream& log) {
  MonteCarloSummary s = run_confounded_mc();
  const auto& ssdid_t = s.tables[0];
  const auto& did_t = s.tables[1];
  double ssdid_cov_min = 1.0, did_cov_max = 0.0;
  bool rmse_ordered = true;
  for (int k = 0; k <= 8; ++k) {
    ssdid_cov_min = std::min(ssdid_cov_min, ssdid_t.coverage(k));
    did_cov_max = std::max(did_cov_max, did_t.coverage(k));
    if (!(ssdid_t.rmse(k) < did_t.rmse(k))) rmse_ordered = false;
  }
  log << "ssdid coverage min=" << ssdid_cov_min << " did coverage max=" << did_cov_max
      << " rmse(ssdid<did at k=0)=" << s.tables[0].rmse(0) << "<" << s.tables[1].rmse(0)
      << " ordered=" << (rmse_ordered ? "yes" : "no");
  return ssdid_cov_min >= 0.90 && did_cov_max <= 0.85 && rmse_ordered;
}

bool criterion_t_centering(std::ostream& log) {
  auto mean_sd = [](const Eigen::MatrixXd& t_stats, int k) {
    double sum = 0.0;
    long n = 0;
    for (int rep = 0; rep < t_stats.rows(); ++rep) {
      if (std::isfinite(t_stats(rep, k))) {
        sum += t_stats(rep, k);
        ++n;
      }
    }
    double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (int rep = 0; rep < t_stats.rows(); ++rep) {
      if (std::isfinite(t_stats(rep, k))) ss += (t_stats(rep, k) - mean) * (t_stats(rep, k) - mean);
    }
    return std::make_pair(mean, std::sqrt(ss / static_cast<double>(n - 1)));
  };

  MonteCarloSummary confounded = run_confounded_mc();
  auto [ssdid_m0, ssdid_s0] = mean_sd(confounded.tables[0].t_stats, 0);
  auto [ssdid_m4, ssdid_s4] = mean_sd(confounded.tables[0].t_stats, 4);
  auto [did_m0, did_s0] = mean_sd(confounded.tables[1].t_stats, 0);
  auto [did_m4, did_s4] = mean_sd(confounded.tables[1].t_stats, 4);

  DgpSpec null_spec = confounded_spec();
  null_spec.signal = 0.0;
  null_spec.factor_trend = 0.0;
  null_spec.seed = 2026;
  SsdidConfig cfg;
  cfg.a_min = 20;
  cfg.a_max = 32;
  cfg.k_max = 8;
  cfg.eta = EtaSpec::auto_rule();
  MonteCarloConfig mc;
  mc.reps = 200;
  mc.threads = 2;
  mc.bootstrap.B = 100;
  mc.estimators = {{"SSDID", EstimatorKind::ssdid, cfg}, {"DID", EstimatorKind::seq_did, cfg}};
  MonteCarloSummary null_mc = monte_carlo(null_spec, mc);
  auto [n_ssdid_m, n_ssdid_s] = mean_sd(null_mc.tables[0].t_stats, 0);
  auto [n_did_m, n_did_s] = mean_sd(null_mc.tables[1].t_stats, 0);

  log << "confounded: ssdid mean t (k0,k4)=(" << ssdid_m0 << "," << ssdid_m4 << ")"
      << " did mean t=(" << did_m0 << "," << did_m4 << ");"
      << " null: ssdid (m=" << n_ssdid_m << ",sd=" << n_ssdid_s << ")"
      << " did (m=" << n_did_m << ",sd=" << n_did_s << ")";
  (void)ssdid_s0;
  (void)ssdid_s4;
  (void)did_s0;
  (void)did_s4;
  return std::abs(ssdid_m0) <= 0.3 && std::abs(ssdid_m4) <= 0.3 && std::abs(did_m0) >= 1.0 &&
         std::abs(did_m4) >= 1.0 && std::abs(n_ssdid_m) <= 0.2 && std::abs(n_did_m) <= 0.2 &&
         n_ssdid_s >= 0.8 && n_ssdid_s <= 1.3 && n_did_s >= 0.8 && n_did_s <= 1.3;
}

// ---------------------------------------------------------------------------
// 7. Property spot checks at acceptance tolerances.
// ---------------------------------------------------------------------------

bool criterion_properties(std::ostream& log) {
  bool ok = true;
  std::ostringstream why;

  // Weight sums and the eta -> INF limit.
  CounterRng rng(505, 0x9);
  for (int trial = 0; trial < 10 && ok; ++trial) {
    RidgeBalanceProblem p;
    p.predictors.resize(6, 4);
    p.target.resize(6);
    p.penalty_diag.resize(4);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 4; ++j) p.predictors(i, j) = rng.next_normal();
      p.target(i) = rng.next_normal();
    }
    for (int j = 0; j < 4; ++j) p.penalty_diag(j) = 0.5 + rng.next_u01();
    p.eta = Eta::value(0.05 + trial * 0.3);
    WeightSolution w = solve_ridge_balance(p);
    if (std::abs(w.weights.sum() - 1.0) > 1e-10) {
      ok = false;
      why << "weight sum violated;";
    }
    p.eta = Eta::value(1e6);
    WeightSolution big = solve_ridge_balance(p);
    p.eta = Eta::inf();
    WeightSolution lim = solve_ridge_balance(p);
    if ((big.weights - lim.weights).norm() > 1e-6) {
      ok = false;
      why << "inf limit violated;";
    }
  }

  // Exact balance residual.
  for (int trial = 0; trial < 10 && ok; ++trial) {
    ExactBalanceProblem p;
    p.moment_matrix.resize(2, 5);
    p.moment_matrix.row(0).setOnes();
    for (int j = 0; j < 5; ++j) p.moment_matrix(1, j) = rng.next_normal();
    Eigen::VectorXd feasible(5);
    for (int j = 0; j < 5; ++j) feasible(j) = rng.next_normal();
    feasible.array() -= (feasible.sum() - 1.0) / 5.0;
    p.moment_target = p.moment_matrix * feasible;
    p.penalty_diag = Eigen::VectorXd::Ones(5);
    WeightSolution w = solve_exact_balance(p);
    if ((p.moment_matrix * w.weights - p.moment_target).norm() > 1e-8) {
      ok = false;
      why << "exact residual violated;";
    }
  }

  // Shift invariance and scale equivariance of the grid.
  {
    InstanceOptions opt;
    opt.adoptions = {4, 5, kNeverTreated, kNeverTreated};
    opt.T = 10;
    opt.r = 1;
    opt.noise_sd = 0.3;
    opt.seed = 606;
    auto inst = make_aggregate_instance(opt);
    SsdidConfig cfg;
    cfg.a_min = 4;
    cfg.a_max = 5;
    cfg.k_max = 3;
    cfg.eta = EtaSpec::fixed(0.4);
    EstimateGrid base = run_sequential(inst.panel, cfg);

    CohortPanel shifted = inst.panel;
    for (int i = 0; i < shifted.n_rows(); ++i) {
      for (int t = 0; t < shifted.T; ++t) shifted.Y(i, t) += 2.0 * i - 1.5 * t;
    }
    EstimateGrid moved = run_sequential(shifted, cfg);
    CohortPanel scaled = inst.panel;
    scaled.Y *= 8.0;
    SsdidConfig scaled_cfg = cfg;
    scaled_cfg.eta = EtaSpec::fixed(0.4 * 8.0);
    EstimateGrid big = run_sequential(scaled, scaled_cfg);
    for (size_t i = 0; i < base.cells.size(); ++i) {
      if (std::abs(base.cells[i].tau_hat - moved.cells[i].tau_hat) > 1e-8) {
        ok = false;
        why << "shift invariance violated;";
      }
      if (std::abs(8.0 * base.cells[i].tau_hat - big.cells[i].tau_hat) >
          1e-8 * std::max(1.0, std::abs(8.0 * base.cells[i].tau_hat))) {
        ok = false;
        why << "scale equivariance violated;";
      }
    }
  }

  // Bootstrap identity and bit determinism with and without threads.
  {
    DgpSpec spec;
    spec.n_units = 60;
    spec.T = 9;
    spec.r = 1;
    spec.signal = 0.5;
    spec.noise = NoiseSpec::iid(0.3);
    spec.assignment = AssignmentSpec::independent(4, 6, 0.3);
    spec.seed = 707;
    SimulatedPanel sim = simulate(spec);
    SsdidConfig cfg;
    cfg.a_min = 4;
    cfg.a_max = 6;
    cfg.k_max = 2;
    cfg.eta = EtaSpec::fixed(0.2);
    GridRunner runner = [cfg](const CohortPanel& p) { return run_sequential(p, cfg); };

    for (double c : {1.0, 2.0}) {
      BootstrapConfig bcfg;
      bcfg.B = 3;
      bcfg.seed = 11;
      bcfg.fixed_xi = c;
      BootstrapResult res = bootstrap(PanelSource::from_units(sim.panel), runner, bcfg);
      for (Eigen::Index k = 0; k < res.horizon_replicates.cols(); ++k) {
        if (res.horizon_replicates(0, k) != res.point.tau_by_horizon(k)) {
          ok = false;
          why << "xi=c identity violated;";
        }
      }
    }

    BootstrapConfig serial;
    serial.B = 16;
    serial.seed = 12;
    serial.threads = 1;
    BootstrapConfig threaded = serial;
    threaded.threads = 3;
    BootstrapResult r1 = bootstrap(PanelSource::from_units(sim.panel), runner, serial);
    BootstrapResult r2 = bootstrap(PanelSource::from_units(sim.panel), runner, threaded);
    if (r1.cell_replicates != r2.cell_replicates ||
        r1.horizon_replicates != r2.horizon_replicates) {
      ok = false;
      why << "thread determinism violated;";
    }
  }

  log << (ok ? "all property checks hold" : why.str());
  return ok;
}

// ---------------------------------------------------------------------------
// 8. Placebo null calibration.
// ---------------------------------------------------------------------------

bool criterion_placebo_null(std::ostream& log) {
  const int seeds = 200;
  int passes = 0;
  std::vector<double> z0, z1;
  for (int s = 0; s < seeds; ++s) {
    DgpSpec spec;
    spec.n_units = 100;
    spec.T = 12;
    spec.r = 2;
    spec.signal = 0.5;
    spec.noise = NoiseSpec::iid(0.3);
    spec.assignment = AssignmentSpec::independent(6, 8, 0.3);
    spec.seed = 3000 + static_cast<std::uint64_t>(s);
    SimulatedPanel sim = simulate(spec);

    SsdidConfig cfg;
    cfg.a_min = 6;
    cfg.a_max = 8;
    cfg.k_max = 3;
    cfg.eta = EtaSpec::auto_rule();
    BootstrapConfig bcfg;
    bcfg.B = 60;
    bcfg.seed = 4000 + static_cast<std::uint64_t>(s);
    PlaceboConfig pcfg;
    pcfg.P = 2;
    PlaceboReport report = run_placebo(PanelSource::from_units(sim.panel), cfg, bcfg, pcfg);
    if (report.pass) ++passes;
    z0.push_back(report.z_scores[0]);
    z1.push_back(report.z_scores[1]);
  }
  double mean_z0 = 0.0, mean_z1 = 0.0;
  for (double z : z0) mean_z0 += z;
  for (double z : z1) mean_z1 += z;
  mean_z0 /= static_cast<double>(seeds);
  mean_z1 /= static_cast<double>(seeds);
  double pass_rate = static_cast<double>(passes) / static_cast<double>(seeds);
  log << "mean z (k0,k1)=(" << mean_z0 << "," << mean_z1 << ") pass rate=" << pass_rate;
  return std::abs(mean_z0) <= 0.3 && std::abs(mean_z1) <= 0.3 && pass_rate >= 0.90;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria = {
      {1, "sequential OLS equals joint OLS on 100 random identified instances (1e-8)", 30.0,
       criterion_equivalence},
      {2, "two-way reduction: INF SSDiD = sequential OLS = plain imputation DiD (1e-10)", 5.0,
       criterion_two_way},
      {3, "zero-noise recovery: oracle exact, SSDiD(1e-6) within 1e-4, error monotone in eta", 5.0,
       criterion_zero_noise},
      {4, "sqrt(n)-scaled SSDiD-oracle gap decreases over n = 1e3, 1e4, 1e5", 300.0,
       criterion_convergence},
      {5, "confounded panel: SSDiD coverage in [0.90,1], DiD <= 0.85, SSDiD RMSE < DiD RMSE",
       900.0, criterion_coverage},
      {6, "t-statistic centering under confounding and under the two-way null", 900.0,
       criterion_t_centering},
      {7, "property suite: sums, residuals, invariances, bootstrap identities, determinism", 60.0,
       criterion_properties},
      {8, "placebo null: |mean z| <= 0.3 and pass rate >= 0.90 over 200 seeds", 600.0,
       criterion_placebo_null},
  };

  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--list") == 0) {
      for (const auto& c : criteria) std::cout << c.id << ": " << c.title << "\n";
      return 0;
    }
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  bool all_ok = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    std::ostringstream detail;
    auto start = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail << " exception: " << e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool in_budget = secs < c.budget_seconds;
    bool pass = ok && in_budget;
    all_ok = all_ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " ["
              << detail.str() << "; " << secs << "s of " << c.budget_seconds << "s budget]"
              << std::endl;
  }
  return all_ok ? 0 : 1;
}
