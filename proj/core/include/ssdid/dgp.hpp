#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssdid/estimator.hpp"
#include "ssdid/inference.hpp"
#include "ssdid/oracle.hpp"
#include "ssdid/panel.hpp"

namespace ssdid {

struct NoiseSpec {
  enum class Kind { iid, ar2 };
  Kind kind = Kind::iid;
  double sd = 1.0;  // iid
  double rho1 = 0.0, rho2 = 0.0, innovation_sd = 1.0;  // ar2

  static NoiseSpec iid(double sd) { return NoiseSpec{Kind::iid, sd, 0, 0, 0}; }
  static NoiseSpec ar2(double rho1, double rho2, double innovation_sd) {
    return NoiseSpec{Kind::ar2, 0, rho1, rho2, innovation_sd};
  }
};

struct AssignmentSpec {
  enum class Kind { independent, confounded };
  Kind kind = Kind::independent;
  int adopt_start = 2;
  int adopt_end = 0;  // 0 resolves to T (independent) or adopt_start+12 capped at T
  double never_share = 0.25;
  // Confounded only: ever-treated log-odds and the adoption-date mean are both
  // affine in the unit's first loading with this coefficient.
  double slope = 0.0;
  double date_sd = 2.0;
  // Adds a deterministic per-cohort offset to every treated unit's loadings,
  // so cohort-mean loadings stay separated as n grows (strong factors).
  double loading_shift = 0.0;

  static AssignmentSpec independent(int start, int end, double never_share) {
    return AssignmentSpec{Kind::independent, start, end, never_share, 0.0, 2.0, 0.0};
  }
  static AssignmentSpec confounded(int start, double never_share, double slope) {
    return AssignmentSpec{Kind::confounded, start, 0, never_share, slope, 2.0, 0.0};
  }
};

// True effects tau(a, k); per-cell table entries override the constant.
struct TauTruth {
  double constant = 1.0;
  std::map<std::pair<AdoptionTime, int>, double> table;

  double at(AdoptionTime a, int k) const {
    auto it = table.find({a, k});
    return it == table.end() ? constant : it->second;
  }
};

struct DgpSpec {
  long n_units = 100;
  int T = 10;
  int r = 0;
  // Interactive-effect strength dial: variance of the factor component over
  // the noise variance equals signal/(1-signal); 0.8 gives the 4x ratio.
  double signal = 0.0;
  // Linear drift added to the first factor (from -trend to +trend across the
  // sample); confounded adoption on a trending factor is the textbook
  // parallel-trends violation.
  double factor_trend = 0.0;
  TauTruth tau;
  NoiseSpec noise;
  AssignmentSpec assignment;
  std::uint64_t seed = 0;
  // When nonzero, the idiosyncratic shocks draw from this separate seed, so a
  // fixed structure (effects, loadings, adoption) can be re-shocked.
  std::uint64_t noise_seed = 0;
  double alpha_sd = 1.0;
  double beta_sd = 1.0;
  // Partition never-treated units into this many covariate cells by their
  // first loading (quantile bins); with the hybrid split each cell becomes a
  // separate control series, so late cohorts keep enough donors to balance.
  int never_groups = 0;
};

struct SimulatedPanel {
  ValidatedPanel panel;
  CovariateScheme scheme;   // hybrid split when never_groups > 0
  CohortPanel aggregated;   // aggregate(panel, scheme)
  FactorStructure factors;  // series-level truth aligned with `aggregated`
  TauTruth tau;

  // Unit-level components; outcome = alpha + beta + ife + tau_applied + noise
  // cell-wise, with `noise` stored so the identity is bit-exact.
  Eigen::VectorXd alpha;        // n
  Eigen::VectorXd beta;         // T
  Eigen::MatrixXd theta_units;  // n x r, includes the signal scaling
  Eigen::MatrixXd psi;          // T x r
  Eigen::MatrixXd ife;          // n x T
  Eigen::MatrixXd tau_applied;  // n x T
  Eigen::MatrixXd noise;        // n x T
  std::vector<AdoptionTime> adoption;  // n, panel unit order
};

SimulatedPanel simulate(const DgpSpec& spec);

struct EstimatorSetup {
  std::string name;  // table label, e.g. "SSDID" / "DID" / "ORACLE"
  EstimatorKind kind = EstimatorKind::ssdid;  // ssdid, seq_did, or seq_ols
  SsdidConfig config;                         // ignored for seq_ols
};

struct MonteCarloConfig {
  int reps = 100;
  std::vector<EstimatorSetup> estimators;
  BootstrapConfig bootstrap;  // seed is re-derived per replication
  int threads = 1;
  // Replications redraw only the idiosyncratic shocks, keeping effects,
  // loadings, and adoption dates fixed (calibrated-components design).
  bool redraw_noise_only = false;
  // Run the estimators on one row per unit (pre-aggregated mode) with
  // row-level bootstrap weights instead of cohort aggregation.
  bool per_unit_rows = false;
};

struct MonteCarloTable {
  std::string name;
  EstimatorKind kind = EstimatorKind::ssdid;
  Eigen::VectorXd truth_mean;  // mean per-horizon target over reps
  Eigen::VectorXd rmse;        // per horizon
  Eigen::VectorXd coverage;    // per horizon; NaN when not bootstrapped
  Eigen::MatrixXd errors;      // reps x horizons
  Eigen::MatrixXd t_stats;     // reps x horizons; NaN when not bootstrapped
};

struct MonteCarloSummary {
  int reps = 0;
  std::vector<MonteCarloTable> tables;
};

// Fresh draw per replication; SSDID/SEQ_DID are bootstrapped for coverage and
// t-statistics, SEQ_OLS is evaluated as a point benchmark with true factors.
MonteCarloSummary monte_carlo(const DgpSpec& spec, const MonteCarloConfig& cfg);

}  // namespace ssdid
