#include "ssdid/placebo.hpp"

#include <cmath>

namespace ssdid {

namespace {

double guarded_z(double estimate, double se) {
  // A noiseless, correctly specified model yields 0/0; call that a clean zero.
  if (se <= 1e-12) return std::abs(estimate) <= 1e-12 ? 0.0 : std::copysign(1e300, estimate);
  return estimate / se;
}

}  // namespace

PlaceboReport run_placebo(const PanelSource& src, const SsdidConfig& estimator_cfg,
                          const BootstrapConfig& bcfg, const PlaceboConfig& pcfg) {
  if (pcfg.P < 1) fail(errc::shift_out_of_range, "placebo shift must be >= 1");

  PanelSource shifted;
  if (src.units) {
    shifted = PanelSource::from_units(shift_adoption(*src.units, pcfg.P), src.scheme);
  } else if (src.rows) {
    shifted = PanelSource::from_rows(shift_adoption(*src.rows, pcfg.P));
  } else {
    fail(errc::bad_bootstrap_config, "panel source is empty");
  }

  SsdidConfig cfg = estimator_cfg;
  cfg.a_min = estimator_cfg.a_min - pcfg.P;
  cfg.a_max = estimator_cfg.a_max - pcfg.P;
  if (cfg.a_min < 2) {
    fail(errc::shift_out_of_range, "placebo shift leaves no pre-period for cohort " +
                                       std::to_string(estimator_cfg.a_min));
  }
  if (!pcfg.anticipation) cfg.k_max = pcfg.P - 1;
  if (!cfg.mu.empty()) {
    std::map<AdoptionTime, double> shifted_mu;
    for (const auto& [a, m] : cfg.mu) shifted_mu[a - pcfg.P] = m;
    cfg.mu = std::move(shifted_mu);
  }

  GridRunner runner = [cfg](const CohortPanel& panel) { return run_sequential(panel, cfg); };

  PlaceboReport report;
  report.P = pcfg.P;
  report.result = bootstrap(shifted, runner, bcfg);

  report.pass = true;
  for (const auto& stat : report.result.horizon_stats) {
    double z = guarded_z(stat.point, stat.se);
    report.z_scores.push_back(z);
    if (std::abs(z) > pcfg.z_threshold) report.pass = false;
  }
  return report;
}

}  // namespace ssdid
