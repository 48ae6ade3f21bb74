#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssdid/estimator.hpp"
#include "ssdid/panel.hpp"

namespace ssdid {

enum class Granularity { unit, cohort_row };
enum class IntervalKind { wald, percentile };

struct BootstrapConfig {
  int B = 100;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  Granularity granularity = Granularity::unit;
  IntervalKind interval = IntervalKind::wald;
  int threads = 1;
  // Test hook: replaces every exponential draw with a constant. The ratio
  // form of the reweighted means cancels it, reproducing the point estimate.
  std::optional<double> fixed_xi;
  // A cohort whose total replicate weight falls below this is resampled
  // (at most 10 retries before DegenerateCohort).
  double degenerate_tol = 1e-12;
};

// Data the bootstrap resamples from: unit records (exponential weights per
// unit, re-aggregated each replicate) or a pre-aggregated panel (weights per
// row; outside the formal theory and flagged as such).
struct PanelSource {
  std::optional<ValidatedPanel> units;
  CovariateScheme scheme;
  std::optional<CohortPanel> rows;

  static PanelSource from_units(ValidatedPanel panel, CovariateScheme scheme = {});
  static PanelSource from_rows(CohortPanel panel);

  CohortPanel point_panel() const;
};

using GridRunner = std::function<EstimateGrid(const CohortPanel&)>;

struct TargetStats {
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct CellKey {
  std::string label;
  AdoptionTime cohort = 0;
  int horizon = 0;
};

struct BootstrapResult {
  EstimateGrid point;
  std::vector<CellKey> cell_keys;
  Eigen::MatrixXd cell_replicates;     // B x n_cells
  Eigen::MatrixXd horizon_replicates;  // B x (k_max+1)
  std::vector<TargetStats> cell_stats;
  std::vector<TargetStats> horizon_stats;
  bool outside_formal_theory = false;  // cohort_row granularity

  // (point - null) / se per horizon aggregate.
  std::vector<double> horizon_t_stats(double null_value) const;
};

BootstrapResult bootstrap(const PanelSource& src, const GridRunner& runner,
                          const BootstrapConfig& cfg);

double t_statistic(double point, double se, double null_value);

// Standard normal quantile (Wichura's AS241, double precision).
double normal_quantile(double p);

// Sample statistics used for the replicate summaries (exposed for tests).
double sample_sd(const Eigen::VectorXd& values);
double sample_quantile(Eigen::VectorXd values, double p);

}  // namespace ssdid
