#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "ssdid/balance.hpp"
#include "ssdid/panel.hpp"

namespace ssdid {

enum class EstimatorKind { ssdid, seq_did, seq_ols, joint_ols };

std::string estimator_kind_name(EstimatorKind k);

// User-facing eta: a fixed value, the symbolic infinity (plain sequential
// DiD), or AUTO (resolved once from the data before the loop).
struct EtaSpec {
  enum class Mode { automatic, infinite, fixed };

  static EtaSpec auto_rule() { return EtaSpec{Mode::automatic, 0.0}; }
  static EtaSpec inf() { return EtaSpec{Mode::infinite, 0.0}; }
  static EtaSpec fixed(double v) { return EtaSpec{Mode::fixed, v}; }

  Mode mode = Mode::automatic;
  double value = 0.0;
};

struct SsdidConfig {
  AdoptionTime a_min = 0;
  AdoptionTime a_max = 0;
  int k_max = 0;
  EtaSpec eta = EtaSpec::auto_rule();
  // Horizon-aggregation weights keyed by adoption time; empty selects the
  // cohort-share default. Must sum to 1 over the estimated cohorts.
  std::map<AdoptionTime, double> mu;
  // Pre-aggregated data mode: rows are e.g. states and several rows may share
  // an adoption time; same-date rows are never controls for one another and
  // are imputed together within a (k, adoption) step.
  bool preaggregated_parallel = false;
};

struct CellEstimate {
  int row = -1;  // index into the panel the grid was computed from
  AdoptionTime cohort = 0;
  int horizon = 0;
  double tau_hat = 0.0;
  WeightSolution omega;
  WeightSolution lambda;
};

struct EstimateGrid {
  EstimatorKind kind = EstimatorKind::ssdid;
  Eta eta_used = Eta::value(0.0);  // meaningless for the oracle kinds
  int k_max = 0;
  std::vector<int> grid_rows;         // estimated rows, panel order
  std::vector<std::string> row_labels;
  std::vector<CellEstimate> cells;    // row-major over (grid row, horizon)
  Eigen::VectorXd tau_by_horizon;     // default-mu aggregates, size k_max+1
  CohortPanel imputed_panel;

  const CellEstimate* find(int row, int horizon) const;
  // Lookup by cohort; the adoption time must identify a unique grid row.
  double tau(AdoptionTime cohort, int horizon) const;
};

// Algorithm: outer loop over horizons, inner loop over cohorts; each cell
// solves the two penalized weight problems, forms the weighted double
// difference, and overwrites the treated cell with its imputed counterfactual
// on a working copy. The caller's panel is never mutated.
EstimateGrid run_sequential(const CohortPanel& panel, const SsdidConfig& cfg);

// One cell against an already-imputed working panel.
CellEstimate estimate_cell(const CohortPanel& working, int row, int horizon, const Eta& eta);
CellEstimate estimate_cell(const CohortPanel& working, AdoptionTime cohort, int horizon,
                           const Eta& eta);

// tau_k = sum_a mu_a * tau_{a,k}. Empty mu selects the cohort-share default.
Eigen::VectorXd aggregate_horizon(const EstimateGrid& grid,
                                  const std::map<AdoptionTime, double>& mu);

struct EtaEstimate {
  double eta = 0.0;
  double sigma_sq = 0.0;  // mean squared two-way residual on untreated cells
  long n_cells = 0;
  bool floored = false;  // true when a zero residual forced the 1e-12 floor
};

// Rule-of-thumb eta = sigma_hat / n^0.45 from a two-way fixed-effects fit on
// untreated cells. The unit-level variant uses unit + period effects; the
// aggregated variant uses row + period effects with n = panel.n_units.
EtaEstimate default_eta(const ValidatedPanel& panel);
EtaEstimate default_eta(const CohortPanel& panel);

}  // namespace ssdid
