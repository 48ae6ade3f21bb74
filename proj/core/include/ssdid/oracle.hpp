#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "ssdid/estimator.hpp"
#include "ssdid/panel.hpp"

namespace ssdid {

// Known interactive-fixed-effect structure for the infeasible benchmarks:
// one r-vector of loadings per panel row and one r-vector of factors per
// period. r = 0 encodes a pure two-way model.
struct FactorStructure {
  int r = 0;
  Eigen::MatrixXd theta;  // panel rows x r
  Eigen::MatrixXd psi;    // T x r
};

// Identification bounds: loadings of series adopting after a_star and factors
// of periods before t_star must each affinely span the factor space.
struct OracleConfig {
  AdoptionTime a_star = 0;
  int t_star = 2;
};

struct AffineHullReport {
  bool ok = false;
  bool loadings_ok = false;
  bool factors_ok = false;
  int required_rank = 0;
  int loadings_rank = 0;
  int factors_rank = 0;
  double loadings_min_sv = 0.0;  // r-th singular value of the demeaned stack
  double factors_min_sv = 0.0;
  int n_controls = 0;
  int n_pre_periods = 0;
};

AffineHullReport check_affine_hull(const FactorStructure& f, const CohortPanel& panel,
                                   const OracleConfig& cfg);

// Sequential oracle: per cell, exact moment balance on the known loadings
// (penalty 1/pi_j) and factors (unit penalty), double difference, imputation.
// Grid is triangular: horizons 0..a_star-t_star, cohorts in [t_star, a_star-k].
EstimateGrid run_sequential_ols(const CohortPanel& panel, const FactorStructure& f,
                                const OracleConfig& cfg);

// One stacked weighted least-squares problem with cohort/period dummies, the
// known factor interactions, and one dummy per treated cell, solved by
// minimum-norm least squares. Only cells with t_star <= a+k <= a_star are
// exposed. A nonzero shuffle seed permutes the design columns before solving;
// exposed estimates must not depend on it.
EstimateGrid run_joint_ols(const CohortPanel& panel, const FactorStructure& f,
                           const OracleConfig& cfg, std::uint64_t column_shuffle_seed = 0);

struct FactorDiagnostics {
  Eigen::MatrixXd L;          // demeaned interaction matrix over (controls, pre-periods)
  double sigma_tilde = 0.0;   // smallest nonzero singular value of L
  bool no_factors = false;    // r == 0
  double sqrt_n_ratio = 0.0;  // sigma_tilde * sqrt(n): factor-strength screen
};

FactorDiagnostics factor_diagnostics(const FactorStructure& f, const CohortPanel& panel,
                                     AdoptionTime a, int k);

// Widest identification bounds this structure supports: smallest feasible
// t_star and the largest a_star whose control loadings still span.
std::optional<OracleConfig> tightest_oracle_bounds(const FactorStructure& f,
                                                   const CohortPanel& panel);

}  // namespace ssdid
