#include "ssdid/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "ssdid/rng.hpp"

namespace ssdid {

PanelSource PanelSource::from_units(ValidatedPanel panel, CovariateScheme scheme) {
  PanelSource src;
  src.units = std::move(panel);
  src.scheme = scheme;
  return src;
}

PanelSource PanelSource::from_rows(CohortPanel panel) {
  PanelSource src;
  src.rows = std::move(panel);
  return src;
}

CohortPanel PanelSource::point_panel() const {
  if (rows) return *rows;
  if (units) return aggregate(*units, scheme);
  fail(errc::bad_bootstrap_config, "panel source is empty");
}

double t_statistic(double point, double se, double null_value) {
  if (!(se > 0.0)) fail(errc::zero_se, "standard error must be positive");
  return (point - null_value) / se;
}

std::vector<double> BootstrapResult::horizon_t_stats(double null_value) const {
  std::vector<double> out;
  out.reserve(horizon_stats.size());
  for (const auto& st : horizon_stats) out.push_back(t_statistic(st.point, st.se, null_value));
  return out;
}

double normal_quantile(double p) {
  // Wichura (1988), algorithm AS241 PPND16.
  if (!(p > 0.0 && p < 1.0)) fail(errc::bad_bootstrap_config, "quantile level outside (0,1)");
  double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double sample_sd(const Eigen::VectorXd& values) {
  const Eigen::Index n = values.size();
  if (n < 2) return 0.0;
  double mean = values.mean();
  double ss = (values.array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(n - 1));
}

double sample_quantile(Eigen::VectorXd values, double p) {
  const Eigen::Index n = values.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.data(), values.data() + n);
  double h = (static_cast<double>(n) - 1.0) * p;
  auto lo = static_cast<Eigen::Index>(std::floor(h));
  auto hi = std::min(lo + 1, n - 1);
  double frac = h - static_cast<double>(lo);
  return values(lo) + frac * (values(hi) - values(lo));
}

namespace {

// One replicate panel for unit granularity: scale every unit's aggregation
// weight by its exponential draw and re-aggregate. Retries (fresh sub-stream)
// when a series' total weight degenerates.
CohortPanel replicate_from_units(const ValidatedPanel& units, const CovariateScheme& scheme,
                                 const BootstrapConfig& cfg, int b) {
  const auto& us = units.units();
  std::vector<UnitSeries> reweighted = us;
  for (int retry = 0; retry <= 10; ++retry) {
    CounterRng rng = CounterRng(cfg.seed, static_cast<std::uint64_t>(b) + 1)
                         .fork(static_cast<std::uint64_t>(retry));
    for (size_t i = 0; i < us.size(); ++i) {
      double xi = cfg.fixed_xi ? *cfg.fixed_xi : rng.next_exponential();
      reweighted[i].weight = us[i].weight * xi;
    }
    std::map<std::pair<AdoptionTime, std::string>, double> totals;
    for (const auto& u : reweighted) {
      totals[{u.adoption, u.group}] += u.weight;
    }
    bool degenerate = false;
    for (const auto& [key, total] : totals) {
      if (total <= cfg.degenerate_tol) degenerate = true;
    }
    if (!degenerate) {
      return aggregate(ValidatedPanel(units.T(), std::move(reweighted)), scheme);
    }
    if (cfg.fixed_xi) break;  // a fixed draw cannot be resampled away
    reweighted = us;
  }
  fail(errc::degenerate_cohort,
       "a cohort's replicate weight stayed below tolerance after 10 retries");
}

CohortPanel replicate_from_rows(const CohortPanel& rows, const BootstrapConfig& cfg, int b) {
  for (int retry = 0; retry <= 10; ++retry) {
    CounterRng rng = CounterRng(cfg.seed, static_cast<std::uint64_t>(b) + 1)
                         .fork(static_cast<std::uint64_t>(retry));
    CohortPanel out = rows;
    double total = 0.0;
    bool degenerate = false;
    for (auto& r : out.rows) {
      double xi = cfg.fixed_xi ? *cfg.fixed_xi : rng.next_exponential();
      r.weight_sum *= xi;
      r.share *= xi;
      if (r.share <= cfg.degenerate_tol) degenerate = true;
      total += r.share;
    }
    if (!degenerate && total > 0.0) {
      for (auto& r : out.rows) r.share /= total;
      return out;
    }
    if (cfg.fixed_xi) break;
  }
  fail(errc::degenerate_cohort,
       "a row's replicate weight stayed below tolerance after 10 retries");
}

TargetStats summarize(double point, const Eigen::VectorXd& reps, const BootstrapConfig& cfg) {
  TargetStats s;
  s.point = point;
  s.se = sample_sd(reps);
  if (cfg.interval == IntervalKind::wald) {
    double q = normal_quantile(1.0 - cfg.alpha / 2.0);
    s.ci_lo = point - q * s.se;
    s.ci_hi = point + q * s.se;
  } else {
    s.ci_lo = sample_quantile(reps, cfg.alpha / 2.0);
    s.ci_hi = sample_quantile(reps, 1.0 - cfg.alpha / 2.0);
  }
  return s;
}

}  // namespace

BootstrapResult bootstrap(const PanelSource& src, const GridRunner& runner,
                          const BootstrapConfig& cfg) {
  if (cfg.B < 2) fail(errc::bad_bootstrap_config, "bootstrap needs B >= 2");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
    fail(errc::bad_bootstrap_config, "alpha must lie in (0,1)");
  }
  if (cfg.granularity == Granularity::unit && !src.units) {
    fail(errc::bad_bootstrap_config, "unit granularity requires unit-level records");
  }

  BootstrapResult out;
  out.outside_formal_theory = cfg.granularity == Granularity::cohort_row;

  CohortPanel point_panel = src.point_panel();
  out.point = runner(point_panel);
  const auto& point = out.point;

  const int n_cells = static_cast<int>(point.cells.size());
  const int n_horizons = static_cast<int>(point.tau_by_horizon.size());
  out.cell_keys.reserve(static_cast<size_t>(n_cells));
  for (const auto& c : point.cells) {
    auto pos = std::find(point.grid_rows.begin(), point.grid_rows.end(), c.row);
    out.cell_keys.push_back(
        CellKey{point.row_labels[static_cast<size_t>(pos - point.grid_rows.begin())], c.cohort,
                c.horizon});
  }

  out.cell_replicates.resize(cfg.B, n_cells);
  out.horizon_replicates.resize(cfg.B, n_horizons);

  // Replicate b is a pure function of (seed, b); rows of the result matrices
  // are disjoint, so any partition over threads gives identical output.
  CohortPanel rows_base;
  if (cfg.granularity == Granularity::cohort_row) {
    rows_base = point_panel;
  }
  auto run_replicate = [&](int b) {
    CohortPanel rep_panel = cfg.granularity == Granularity::unit
                                ? replicate_from_units(*src.units, src.scheme, cfg, b)
                                : replicate_from_rows(rows_base, cfg, b);
    EstimateGrid grid = runner(rep_panel);
    if (static_cast<int>(grid.cells.size()) != n_cells ||
        grid.tau_by_horizon.size() != n_horizons) {
      fail(errc::bad_bootstrap_config, "replicate grid shape differs from the point grid");
    }
    for (int c = 0; c < n_cells; ++c) {
      out.cell_replicates(b, c) = grid.cells[static_cast<size_t>(c)].tau_hat;
    }
    out.horizon_replicates.row(b) = grid.tau_by_horizon.transpose();
  };

  int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (int b = 0; b < cfg.B; ++b) run_replicate(b);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          int b = next.fetch_add(1);
          if (b >= cfg.B) return;
          try {
            run_replicate(b);
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

  for (int c = 0; c < n_cells; ++c) {
    out.cell_stats.push_back(
        summarize(point.cells[static_cast<size_t>(c)].tau_hat, out.cell_replicates.col(c), cfg));
  }
  for (int k = 0; k < n_horizons; ++k) {
    out.horizon_stats.push_back(
        summarize(point.tau_by_horizon(k), out.horizon_replicates.col(k), cfg));
  }
  return out;
}

}  // namespace ssdid
