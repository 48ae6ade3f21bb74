#include "ssdid/dgp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "ssdid/rng.hpp"

namespace ssdid {

namespace {

constexpr std::uint64_t kStreamBeta = 0xb3;
constexpr std::uint64_t kStreamPsi = 0x51;
constexpr std::uint64_t kStreamUnits = 0x301;
constexpr std::uint64_t kStreamNoise = 0x707;
constexpr std::uint64_t kStreamReps = 0x4d43;
constexpr std::uint64_t kStreamBoot = 0xb001;

int resolve_adopt_end(const DgpSpec& spec) {
  if (spec.assignment.adopt_end != 0) return spec.assignment.adopt_end;
  if (spec.assignment.kind == AssignmentSpec::Kind::confounded) {
    return std::min(spec.T, spec.assignment.adopt_start + 12);
  }
  return spec.T;
}

void validate_spec(const DgpSpec& spec, int adopt_end) {
  if (spec.n_units < 2) fail(errc::infeasible_spec, "need at least two units");
  if (spec.T < 3) fail(errc::infeasible_spec, "need at least three periods");
  if (spec.r < 0) fail(errc::infeasible_spec, "factor rank must be nonnegative");
  if (!(spec.signal >= 0.0 && spec.signal <= 0.8)) {
    fail(errc::infeasible_spec, "signal must lie in [0, 0.8]");
  }
  if (spec.signal > 0.0 && spec.r == 0) {
    fail(errc::infeasible_spec, "a positive signal needs factor rank >= 1");
  }
  if (spec.assignment.adopt_start < 2 || spec.assignment.adopt_start > spec.T) {
    fail(errc::infeasible_spec, "adoption window start outside 2..T");
  }
  if (adopt_end < spec.assignment.adopt_start || adopt_end > spec.T) {
    fail(errc::infeasible_spec, "adoption window is empty or exceeds T");
  }
  if (!(spec.assignment.never_share >= 0.0 && spec.assignment.never_share < 1.0)) {
    fail(errc::infeasible_spec, "never-treated share must lie in [0, 1)");
  }
  if (spec.noise.kind == NoiseSpec::Kind::ar2) {
    double r1 = spec.noise.rho1, r2 = spec.noise.rho2;
    if (!(std::abs(r2) < 1.0 && r2 + r1 < 1.0 && r2 - r1 < 1.0)) {
      fail(errc::infeasible_spec, "AR(2) coefficients are not stationary");
    }
  }
  if (spec.noise.kind == NoiseSpec::Kind::iid && spec.noise.sd < 0.0) {
    fail(errc::infeasible_spec, "noise sd must be nonnegative");
  }
  if (spec.never_groups < 0) fail(errc::infeasible_spec, "never_groups must be nonnegative");
  if (spec.never_groups > 0 && spec.r == 0) {
    fail(errc::infeasible_spec, "never-treated covariate cells need factor rank >= 1");
  }
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::string unit_id(long i, long n) {
  int width = 1;
  for (long v = n; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(i);
  return "u" + std::string(static_cast<size_t>(width) - std::min(digits.size(),
                                                                 static_cast<size_t>(width)),
                           '0') + digits;
}

double matrix_variance(const Eigen::MatrixXd& m) {
  double mean = m.mean();
  return (m.array() - mean).square().sum() / static_cast<double>(m.size());
}

}  // namespace

SimulatedPanel simulate(const DgpSpec& spec) {
  const int adopt_end = resolve_adopt_end(spec);
  validate_spec(spec, adopt_end);
  const long n = spec.n_units;
  const int T = spec.T;
  const int r = spec.r;

  SimulatedPanel sim;
  sim.tau = spec.tau;

  CounterRng beta_rng(spec.seed, kStreamBeta);
  sim.beta.resize(T);
  for (int t = 0; t < T; ++t) sim.beta(t) = spec.beta_sd * beta_rng.next_normal();

  CounterRng psi_rng(spec.seed, kStreamPsi);
  sim.psi.resize(T, r);
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < r; ++m) sim.psi(t, m) = psi_rng.next_normal();
  }
  if (r > 0 && spec.factor_trend != 0.0 && T > 1) {
    for (int t = 0; t < T; ++t) {
      sim.psi(t, 0) += spec.factor_trend * (2.0 * t - (T - 1)) / (T - 1);
    }
  }

  sim.alpha.resize(n);
  sim.theta_units.resize(n, r);
  sim.noise.resize(n, T);
  sim.adoption.resize(static_cast<size_t>(n));

  const double ever_intercept =
      spec.assignment.never_share > 0.0 ? logit(1.0 - spec.assignment.never_share) : 0.0;
  const double date_mid = 0.5 * (spec.assignment.adopt_start + adopt_end);

  for (long i = 0; i < n; ++i) {
    CounterRng rng = CounterRng(spec.seed, kStreamUnits).fork(static_cast<std::uint64_t>(i));
    sim.alpha(i) = spec.alpha_sd * rng.next_normal();
    for (int m = 0; m < r; ++m) sim.theta_units(i, m) = rng.next_normal();

    double first_loading = r > 0 ? sim.theta_units(i, 0) : 0.0;
    AdoptionTime adoption = kNeverTreated;
    switch (spec.assignment.kind) {
      case AssignmentSpec::Kind::independent: {
        if (rng.next_u01() >= spec.assignment.never_share) {
          long width = adopt_end - spec.assignment.adopt_start + 1;
          adoption = spec.assignment.adopt_start +
                     static_cast<long>(rng.next_below(static_cast<std::uint64_t>(width)));
        }
        break;
      }
      case AssignmentSpec::Kind::confounded: {
        // Ever-treated selection is kept mild relative to the timing channel,
        // so never-treated loadings still bracket the treated cohorts'.
        double ever_logodds = spec.assignment.never_share > 0.0
                                  ? ever_intercept + 0.2 * spec.assignment.slope * first_loading
                                  : 1e6;
        double p_ever = 1.0 / (1.0 + std::exp(-ever_logodds));
        if (rng.next_u01() < p_ever) {
          double mean = date_mid + spec.assignment.slope * first_loading;
          double raw = mean + spec.assignment.date_sd * rng.next_normal();
          long date = std::lround(raw);
          date = std::clamp<long>(date, spec.assignment.adopt_start, adopt_end);
          adoption = date;
        }
        break;
      }
    }
    sim.adoption[static_cast<size_t>(i)] = adoption;

    if (spec.assignment.loading_shift != 0.0 && !is_never_treated(adoption)) {
      // Per-cohort directions at distinct frequencies keep the cohort-mean
      // loadings in general position at every rank.
      for (int m = 0; m < r; ++m) {
        sim.theta_units(i, m) +=
            spec.assignment.loading_shift *
            std::cos(2.399963229728653 * static_cast<double>((m + 1) * adoption) + 0.7 * m);
      }
    }

    std::uint64_t noise_seed = spec.noise_seed != 0 ? spec.noise_seed : spec.seed;
    CounterRng noise_rng =
        CounterRng(noise_seed, kStreamNoise).fork(static_cast<std::uint64_t>(i));
    if (spec.noise.kind == NoiseSpec::Kind::iid) {
      for (int t = 0; t < T; ++t) sim.noise(i, t) = spec.noise.sd * noise_rng.next_normal();
    } else {
      // AR(2) with a burn-in from zero initial conditions.
      double prev1 = 0.0, prev2 = 0.0;
      for (int t = -50; t < T; ++t) {
        double x = spec.noise.rho1 * prev1 + spec.noise.rho2 * prev2 +
                   spec.noise.innovation_sd * noise_rng.next_normal();
        prev2 = prev1;
        prev1 = x;
        if (t >= 0) sim.noise(i, t) = x;
      }
    }
  }

  // Scale the factor component so the realized variance ratio against the
  // realized noise variance hits signal/(1-signal).
  sim.ife.resize(n, T);
  if (r > 0) {
    sim.ife = sim.theta_units * sim.psi.transpose();
  } else {
    sim.ife.setZero();
  }
  double scale = 0.0;
  if (spec.signal > 0.0) {
    double v_ife = matrix_variance(sim.ife);
    double v_noise = matrix_variance(sim.noise);
    double ratio = spec.signal / (1.0 - spec.signal);
    if (v_noise > 0.0 && v_ife > 0.0) {
      scale = std::sqrt(ratio * v_noise / v_ife);
    } else if (v_ife > 0.0) {
      scale = 1.0;  // noiseless draw: keep the factors at unit scale
    }
  }
  sim.theta_units *= scale;
  sim.ife *= scale;

  // Covariate cells for never-treated units: quantile bins of the first
  // loading, mirroring baseline-covariate control groups.
  std::vector<std::string> group(static_cast<size_t>(n));
  if (spec.never_groups > 0 && r > 0) {
    std::vector<long> never_idx;
    for (long i = 0; i < n; ++i) {
      if (is_never_treated(sim.adoption[static_cast<size_t>(i)])) never_idx.push_back(i);
    }
    std::sort(never_idx.begin(), never_idx.end(), [&](long a, long b) {
      return sim.theta_units(a, 0) < sim.theta_units(b, 0);
    });
    for (size_t rank = 0; rank < never_idx.size(); ++rank) {
      int cell = static_cast<int>((rank * static_cast<size_t>(spec.never_groups)) /
                                  std::max<size_t>(1, never_idx.size()));
      group[static_cast<size_t>(never_idx[rank])] = "q" + std::to_string(cell + 1);
    }
    sim.scheme = CovariateScheme{CovariateMode::hybrid, true};
  }

  sim.tau_applied = Eigen::MatrixXd::Zero(n, T);
  std::vector<PanelRecord> records;
  records.reserve(static_cast<size_t>(n) * static_cast<size_t>(T));
  for (long i = 0; i < n; ++i) {
    AdoptionTime a = sim.adoption[static_cast<size_t>(i)];
    for (int t = 0; t < T; ++t) {
      if (!is_never_treated(a) && t + 1 >= a) {
        sim.tau_applied(i, t) = spec.tau.at(a, static_cast<int>(t + 1 - a));
      }
      double base = sim.alpha(i) + sim.beta(t) + sim.ife(i, t) + sim.tau_applied(i, t);
      double y = base + sim.noise(i, t);
      sim.noise(i, t) = y - base;  // re-derive so the decomposition is bit-exact
      records.push_back(PanelRecord{unit_id(i, n), t + 1, y, a, 1.0, group[static_cast<size_t>(i)]});
    }
  }

  sim.panel = validate(records);
  sim.aggregated = aggregate(sim.panel, sim.scheme);

  // Series-level loadings: within-row means, aligned with aggregated rows.
  sim.factors.r = r;
  sim.factors.psi = sim.psi;
  sim.factors.theta = Eigen::MatrixXd::Zero(sim.aggregated.n_rows(), r);
  if (r > 0) {
    std::map<std::string, std::pair<Eigen::RowVectorXd, long>> sums;
    for (long i = 0; i < n; ++i) {
      AdoptionTime a = sim.adoption[static_cast<size_t>(i)];
      bool split = sim.scheme.mode == CovariateMode::hybrid && sim.scheme.never_treated_split &&
                   is_never_treated(a) && !group[static_cast<size_t>(i)].empty();
      std::string label = adoption_to_string(a);
      if (split) label += ":" + group[static_cast<size_t>(i)];
      auto it = sums.find(label);
      if (it == sums.end()) {
        sums.emplace(label, std::make_pair(sim.theta_units.row(i).eval(), 1L));
      } else {
        it->second.first += sim.theta_units.row(i);
        it->second.second += 1;
      }
    }
    for (int row = 0; row < sim.aggregated.n_rows(); ++row) {
      const auto& entry = sums.at(sim.aggregated.rows[static_cast<size_t>(row)].label);
      sim.factors.theta.row(row) = entry.first / static_cast<double>(entry.second);
    }
  }
  return sim;
}

namespace {

Eigen::VectorXd truth_by_horizon(const EstimateGrid& grid, const TauTruth& tau,
                                 const std::map<AdoptionTime, double>& mu) {
  EstimateGrid truth = grid;
  for (auto& cell : truth.cells) cell.tau_hat = tau.at(cell.cohort, cell.horizon);
  return aggregate_horizon(truth, mu);
}

}  // namespace

MonteCarloSummary monte_carlo(const DgpSpec& spec, const MonteCarloConfig& cfg) {
  if (cfg.reps < 2) fail(errc::infeasible_spec, "monte carlo needs at least two replications");
  if (cfg.estimators.empty()) fail(errc::infeasible_spec, "no estimators configured");

  const int n_est = static_cast<int>(cfg.estimators.size());
  const int reps = cfg.reps;

  // Horizon count per estimator comes from the first replication.
  std::vector<Eigen::MatrixXd> errors(static_cast<size_t>(n_est));
  std::vector<Eigen::MatrixXd> tstats(static_cast<size_t>(n_est));
  std::vector<Eigen::MatrixXd> covers(static_cast<size_t>(n_est));
  std::vector<Eigen::MatrixXd> truths(static_cast<size_t>(n_est));
  std::mutex init_mutex;
  std::vector<bool> initialized(static_cast<size_t>(n_est), false);

  auto ensure_shape = [&](int e, int horizons) {
    std::lock_guard<std::mutex> lock(init_mutex);
    if (!initialized[static_cast<size_t>(e)]) {
      errors[static_cast<size_t>(e)].setConstant(reps, horizons,
                                                 std::numeric_limits<double>::quiet_NaN());
      tstats[static_cast<size_t>(e)].setConstant(reps, horizons,
                                                 std::numeric_limits<double>::quiet_NaN());
      covers[static_cast<size_t>(e)].setConstant(reps, horizons,
                                                 std::numeric_limits<double>::quiet_NaN());
      truths[static_cast<size_t>(e)].setConstant(reps, horizons,
                                                 std::numeric_limits<double>::quiet_NaN());
      initialized[static_cast<size_t>(e)] = true;
    }
  };

  auto run_rep = [&](int rep) {
    DgpSpec rep_spec = spec;
    std::uint64_t rep_seed =
        CounterRng(spec.seed, kStreamReps).fork(static_cast<std::uint64_t>(rep)).next_u64();
    if (cfg.redraw_noise_only) {
      rep_spec.noise_seed = rep_seed;
    } else {
      rep_spec.seed = rep_seed;
    }
    SimulatedPanel sim = simulate(rep_spec);

    for (int e = 0; e < n_est; ++e) {
      const EstimatorSetup& setup = cfg.estimators[static_cast<size_t>(e)];
      if (setup.kind == EstimatorKind::seq_ols) {
        auto bounds = tightest_oracle_bounds(sim.factors, sim.aggregated);
        if (!bounds) continue;  // unidentified draw: leave NaN
        EstimateGrid grid = run_sequential_ols(sim.aggregated, sim.factors, *bounds);
        Eigen::VectorXd truth = truth_by_horizon(grid, sim.tau, {});
        int horizons = static_cast<int>(grid.tau_by_horizon.size());
        ensure_shape(e, horizons);
        int cols = static_cast<int>(errors[static_cast<size_t>(e)].cols());
        for (int k = 0; k < std::min(horizons, cols); ++k) {
          errors[static_cast<size_t>(e)](rep, k) = grid.tau_by_horizon(k) - truth(k);
          truths[static_cast<size_t>(e)](rep, k) = truth(k);
        }
        continue;
      }

      SsdidConfig config = setup.config;
      if (setup.kind == EstimatorKind::seq_did) config.eta = EtaSpec::inf();
      if (config.eta.mode == EtaSpec::Mode::automatic) {
        config.eta = EtaSpec::fixed(default_eta(sim.panel).eta);
      }
      if (cfg.per_unit_rows) config.preaggregated_parallel = true;
      GridRunner runner = [config](const CohortPanel& p) { return run_sequential(p, config); };

      BootstrapConfig bcfg = cfg.bootstrap;
      bcfg.seed =
          CounterRng(rep_seed, kStreamBoot).fork(static_cast<std::uint64_t>(e)).next_u64();
      PanelSource src;
      if (cfg.per_unit_rows) {
        bcfg.granularity = Granularity::cohort_row;
        src = PanelSource::from_rows(unit_rows(sim.panel));
      } else {
        src = PanelSource::from_units(sim.panel, sim.scheme);
      }
      BootstrapResult boot = bootstrap(src, runner, bcfg);

      Eigen::VectorXd truth = truth_by_horizon(boot.point, sim.tau, config.mu);
      int horizons = static_cast<int>(boot.point.tau_by_horizon.size());
      ensure_shape(e, horizons);
      int cols = static_cast<int>(errors[static_cast<size_t>(e)].cols());
      for (int k = 0; k < std::min(horizons, cols); ++k) {
        const TargetStats& st = boot.horizon_stats[static_cast<size_t>(k)];
        errors[static_cast<size_t>(e)](rep, k) = st.point - truth(k);
        truths[static_cast<size_t>(e)](rep, k) = truth(k);
        covers[static_cast<size_t>(e)](rep, k) =
            (st.ci_lo <= truth(k) && truth(k) <= st.ci_hi) ? 1.0 : 0.0;
        if (st.se > 0.0) {
          tstats[static_cast<size_t>(e)](rep, k) = (st.point - truth(k)) / st.se;
        }
      }
    }
  };

  int threads = std::max(1, cfg.threads);
  // Replication 0 runs first on its own so the table shapes are fixed
  // deterministically before any parallel work starts.
  run_rep(0);
  if (threads == 1) {
    for (int rep = 1; rep < reps; ++rep) run_rep(rep);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::atomic<int> next{1};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          int rep = next.fetch_add(1);
          if (rep >= reps) return;
          try {
            run_rep(rep);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  MonteCarloSummary out;
  out.reps = reps;
  for (int e = 0; e < n_est; ++e) {
    MonteCarloTable table;
    table.name = cfg.estimators[static_cast<size_t>(e)].name;
    table.kind = cfg.estimators[static_cast<size_t>(e)].kind;
    const auto& err = errors[static_cast<size_t>(e)];
    const int horizons = static_cast<int>(err.cols());
    table.errors = err;
    table.t_stats = tstats[static_cast<size_t>(e)];
    table.rmse.setConstant(horizons, std::numeric_limits<double>::quiet_NaN());
    table.coverage.setConstant(horizons, std::numeric_limits<double>::quiet_NaN());
    table.truth_mean.setConstant(horizons, std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < horizons; ++k) {
      double ss = 0.0, truth_sum = 0.0;
      long n_err = 0;
      double cover_sum = 0.0;
      long n_cover = 0;
      for (int rep = 0; rep < reps; ++rep) {
        double v = err(rep, k);
        if (std::isfinite(v)) {
          ss += v * v;
          truth_sum += truths[static_cast<size_t>(e)](rep, k);
          ++n_err;
        }
        double c = covers[static_cast<size_t>(e)](rep, k);
        if (std::isfinite(c)) {
          cover_sum += c;
          ++n_cover;
        }
      }
      if (n_err > 0) {
        table.rmse(k) = std::sqrt(ss / static_cast<double>(n_err));
        table.truth_mean(k) = truth_sum / static_cast<double>(n_err);
      }
      if (n_cover > 0) table.coverage(k) = cover_sum / static_cast<double>(n_cover);
    }
    out.tables.push_back(std::move(table));
  }
  return out;
}

}  // namespace ssdid
