#include "ssdid/estimator.hpp"

#include <algorithm>
#include <cmath>

namespace ssdid {

std::string estimator_kind_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::ssdid: return "SSDID";
    case EstimatorKind::seq_did: return "SEQ_DID";
    case EstimatorKind::seq_ols: return "SEQ_OLS";
    case EstimatorKind::joint_ols: return "JOINT_OLS";
  }
  return "?";
}

const CellEstimate* EstimateGrid::find(int row, int horizon) const {
  for (const auto& c : cells) {
    if (c.row == row && c.horizon == horizon) return &c;
  }
  return nullptr;
}

double EstimateGrid::tau(AdoptionTime cohort, int horizon) const {
  const CellEstimate* hit = nullptr;
  for (const auto& c : cells) {
    if (c.cohort == cohort && c.horizon == horizon) {
      if (hit) {
        fail(errc::bad_config, "cohort " + adoption_to_string(cohort) +
                                   " has several grid rows; look cells up by row");
      }
      hit = &c;
    }
  }
  if (!hit) {
    fail(errc::bad_config, "no estimate for cohort " + adoption_to_string(cohort) +
                               " at horizon " + std::to_string(horizon));
  }
  return hit->tau_hat;
}

namespace {

CellEstimate estimate_cell_impl(const CohortPanel& working, int row, int horizon,
                                const Eta& eta) {
  const auto& target_row = working.rows[static_cast<size_t>(row)];
  const AdoptionTime a = target_row.adoption;
  if (is_never_treated(a)) {
    fail(errc::bad_config, "cannot estimate a never-treated series");
  }
  const long post = a + horizon;  // 1-based period of the estimated cell
  if (post > working.T) {
    fail(errc::horizon_overflow, "cohort " + std::to_string(a) + " at horizon " +
                                     std::to_string(horizon) + " needs period " +
                                     std::to_string(post) + " > T=" + std::to_string(working.T));
  }
  const int n_pre = static_cast<int>(post) - 1;  // periods l < a + k
  if (n_pre < 1) {
    fail(errc::bad_config, "cohort " + std::to_string(a) + " has no pre-period");
  }
  std::vector<int> controls = working.controls_after(a);
  if (controls.empty()) {
    fail(errc::no_controls, "no series adopts after cohort " + std::to_string(a));
  }
  const int J = static_cast<int>(controls.size());

  // Unit weights: fit the treated pre-period series with control series,
  // penalty 1/pi_j per control.
  RidgeBalanceProblem omega_p;
  omega_p.predictors.resize(n_pre, J);
  omega_p.target.resize(n_pre);
  omega_p.penalty_diag.resize(J);
  for (int j = 0; j < J; ++j) {
    omega_p.predictors.col(j) =
        working.Y.row(controls[static_cast<size_t>(j)]).head(n_pre).transpose();
    omega_p.penalty_diag(j) =
        1.0 / working.rows[static_cast<size_t>(controls[static_cast<size_t>(j)])].share;
  }
  omega_p.target = working.Y.row(row).head(n_pre).transpose();
  omega_p.eta = eta;
  WeightSolution omega = solve_ridge_balance(omega_p);

  // Time weights: fit each control's event-period value with its pre-period
  // values, unit penalty per period.
  RidgeBalanceProblem lambda_p;
  lambda_p.predictors.resize(J, n_pre);
  lambda_p.target.resize(J);
  lambda_p.penalty_diag = Eigen::VectorXd::Ones(n_pre);
  for (int j = 0; j < J; ++j) {
    int cj = controls[static_cast<size_t>(j)];
    lambda_p.predictors.row(j) = working.Y.row(cj).head(n_pre);
    lambda_p.target(j) = working.Y(cj, post - 1);
  }
  lambda_p.eta = eta;
  WeightSolution lambda = solve_ridge_balance(lambda_p);

  double treated_post = working.Y(row, post - 1);
  double controls_post = 0.0;
  for (int j = 0; j < J; ++j) {
    controls_post += omega.weights(j) * working.Y(controls[static_cast<size_t>(j)], post - 1);
  }
  double pre_gap = 0.0;
  for (int l = 0; l < n_pre; ++l) {
    double controls_pre = 0.0;
    for (int j = 0; j < J; ++j) {
      controls_pre += omega.weights(j) * working.Y(controls[static_cast<size_t>(j)], l);
    }
    pre_gap += lambda.weights(l) * (working.Y(row, l) - controls_pre);
  }

  CellEstimate cell;
  cell.row = row;
  cell.cohort = a;
  cell.horizon = horizon;
  cell.tau_hat = (treated_post - controls_post) - pre_gap;
  cell.omega = std::move(omega);
  cell.lambda = std::move(lambda);
  return cell;
}

void validate_config(const CohortPanel& panel, const SsdidConfig& cfg) {
  if (cfg.a_min < 2) {
    fail(errc::bad_config, "a_min must be >= 2 (one pre-period required)");
  }
  if (cfg.a_min > cfg.a_max) fail(errc::bad_config, "a_min exceeds a_max");
  if (cfg.k_max < 0) fail(errc::bad_config, "k_max must be nonnegative");
  if (cfg.a_max + cfg.k_max > panel.T) {
    fail(errc::horizon_overflow,
         "a_max + K = " + std::to_string(cfg.a_max + cfg.k_max) + " exceeds T = " +
             std::to_string(panel.T));
  }
}

Eigen::VectorXd default_mu(const CohortPanel& panel, const std::vector<int>& grid_rows) {
  Eigen::VectorXd mu(grid_rows.size());
  for (size_t i = 0; i < grid_rows.size(); ++i) {
    mu(static_cast<Eigen::Index>(i)) = panel.rows[static_cast<size_t>(grid_rows[i])].share;
  }
  double total = mu.sum();
  if (!(total > 0.0)) fail(errc::bad_config, "estimated cohorts have zero total share");
  return mu / total;
}

}  // namespace

CellEstimate estimate_cell(const CohortPanel& working, int row, int horizon, const Eta& eta) {
  if (row < 0 || row >= working.n_rows()) fail(errc::bad_config, "row index out of range");
  return estimate_cell_impl(working, row, horizon, eta);
}

CellEstimate estimate_cell(const CohortPanel& working, AdoptionTime cohort, int horizon,
                           const Eta& eta) {
  auto rows = working.rows_with_adoption(cohort);
  if (rows.empty()) {
    fail(errc::bad_config, "no series with adoption " + adoption_to_string(cohort));
  }
  if (rows.size() > 1) {
    fail(errc::bad_config, "adoption " + adoption_to_string(cohort) +
                               " has several rows; estimate by row index");
  }
  return estimate_cell_impl(working, rows.front(), horizon, eta);
}

EstimateGrid run_sequential(const CohortPanel& panel, const SsdidConfig& cfg) {
  panel.check_invariants();
  validate_config(panel, cfg);

  std::vector<int> grid_rows;
  for (int r = 0; r < panel.n_rows(); ++r) {
    AdoptionTime a = panel.rows[static_cast<size_t>(r)].adoption;
    if (!is_never_treated(a) && a >= cfg.a_min && a <= cfg.a_max) grid_rows.push_back(r);
  }
  if (grid_rows.empty()) {
    fail(errc::bad_config, "no cohort falls in [" + std::to_string(cfg.a_min) + ", " +
                               std::to_string(cfg.a_max) + "]");
  }
  for (int r : grid_rows) {
    if (panel.controls_after(panel.rows[static_cast<size_t>(r)].adoption).empty()) {
      fail(errc::no_controls, "no series adopts after cohort " +
                                  std::to_string(panel.rows[static_cast<size_t>(r)].adoption));
    }
  }

  Eta eta = Eta::value(0.0);
  EstimatorKind kind = EstimatorKind::ssdid;
  switch (cfg.eta.mode) {
    case EtaSpec::Mode::automatic:
      eta = Eta::value(default_eta(panel).eta);
      break;
    case EtaSpec::Mode::infinite:
      eta = Eta::inf();
      kind = EstimatorKind::seq_did;
      break;
    case EtaSpec::Mode::fixed:
      if (!(cfg.eta.value > 0.0)) fail(errc::bad_config, "eta must be positive");
      eta = Eta::value(cfg.eta.value);
      break;
  }

  EstimateGrid grid;
  grid.kind = kind;
  grid.eta_used = eta;
  grid.k_max = cfg.k_max;
  grid.grid_rows = grid_rows;
  for (int r : grid_rows) grid.row_labels.push_back(panel.rows[static_cast<size_t>(r)].label);
  grid.cells.reserve(grid_rows.size() * static_cast<size_t>(cfg.k_max + 1));

  CohortPanel working = panel;

  // Rows sharing an adoption time are estimated from the same working state
  // and imputed together, so same-date rows never feed each other's weights.
  std::vector<std::pair<AdoptionTime, std::vector<int>>> steps;
  for (int r : grid_rows) {
    AdoptionTime a = panel.rows[static_cast<size_t>(r)].adoption;
    if (steps.empty() || steps.back().first != a) steps.push_back({a, {}});
    steps.back().second.push_back(r);
  }

  for (int k = 0; k <= cfg.k_max; ++k) {
    for (auto& [a, rows_a] : steps) {
      std::vector<CellEstimate> batch;
      batch.reserve(rows_a.size());
      for (int r : rows_a) batch.push_back(estimate_cell_impl(working, r, k, eta));
      for (auto& cell : batch) {
        working.Y(cell.row, a + k - 1) -= cell.tau_hat;
        grid.cells.push_back(std::move(cell));
      }
    }
  }

  // Re-order cells row-major over (grid row, horizon) for stable lookup.
  std::sort(grid.cells.begin(), grid.cells.end(), [](const CellEstimate& x, const CellEstimate& y) {
    if (x.row != y.row) return x.row < y.row;
    return x.horizon < y.horizon;
  });

  grid.imputed_panel = std::move(working);
  grid.tau_by_horizon = aggregate_horizon(grid, cfg.mu);
  return grid;
}

Eigen::VectorXd aggregate_horizon(const EstimateGrid& grid,
                                  const std::map<AdoptionTime, double>& mu) {
  const auto& panel = grid.imputed_panel;
  Eigen::VectorXd weights;
  if (mu.empty()) {
    weights = default_mu(panel, grid.grid_rows);
  } else {
    double total = 0.0;
    for (const auto& [a, m] : mu) total += m;
    if (std::abs(total - 1.0) > 1e-8) {
      fail(errc::weight_sum_violation,
           "mu weights sum to " + std::to_string(total) + ", expected 1");
    }
    // Spread each cohort's mu across its rows in proportion to row shares.
    weights.resize(static_cast<Eigen::Index>(grid.grid_rows.size()));
    std::map<AdoptionTime, double> share_by_cohort;
    for (int r : grid.grid_rows) {
      share_by_cohort[panel.rows[static_cast<size_t>(r)].adoption] +=
          panel.rows[static_cast<size_t>(r)].share;
    }
    for (size_t i = 0; i < grid.grid_rows.size(); ++i) {
      const auto& row = panel.rows[static_cast<size_t>(grid.grid_rows[i])];
      auto it = mu.find(row.adoption);
      if (it == mu.end()) {
        fail(errc::weight_sum_violation,
             "mu does not cover cohort " + adoption_to_string(row.adoption));
      }
      weights(static_cast<Eigen::Index>(i)) =
          it->second * row.share / share_by_cohort[row.adoption];
    }
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.k_max + 1);
  Eigen::VectorXd covered = Eigen::VectorXd::Zero(grid.k_max + 1);
  for (const auto& cell : grid.cells) {
    auto pos = std::find(grid.grid_rows.begin(), grid.grid_rows.end(), cell.row);
    auto i = static_cast<Eigen::Index>(pos - grid.grid_rows.begin());
    out(cell.horizon) += weights(i) * cell.tau_hat;
    covered(cell.horizon) += weights(i);
  }
  // Ragged (oracle) grids: renormalize over the rows present at each horizon.
  for (int k = 0; k <= grid.k_max; ++k) {
    if (covered(k) > 0.0 && std::abs(covered(k) - 1.0) > 1e-12) out(k) /= covered(k);
    if (covered(k) == 0.0) out(k) = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

namespace {

struct TwoWayFit {
  double sigma_sq = 0.0;
  long n_cells = 0;
};

// Alternating row/column demeaning on the masked cells until the adjustment
// size drops below 1e-12.
TwoWayFit two_way_residual_variance(Eigen::MatrixXd values,
                                    const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  const Eigen::Index R = values.rows();
  const Eigen::Index C = values.cols();
  long n_cells = 0;
  for (Eigen::Index i = 0; i < R; ++i) {
    for (Eigen::Index t = 0; t < C; ++t) {
      if (mask(i, t)) ++n_cells;
    }
  }
  if (n_cells == 0) fail(errc::no_untreated_cells, "no untreated cells to fit on");

  for (int iter = 0; iter < 10000; ++iter) {
    double max_adj = 0.0;
    for (Eigen::Index i = 0; i < R; ++i) {
      double sum = 0.0;
      long cnt = 0;
      for (Eigen::Index t = 0; t < C; ++t) {
        if (mask(i, t)) { sum += values(i, t); ++cnt; }
      }
      if (cnt == 0) continue;
      double mean = sum / static_cast<double>(cnt);
      for (Eigen::Index t = 0; t < C; ++t) {
        if (mask(i, t)) values(i, t) -= mean;
      }
      max_adj = std::max(max_adj, std::abs(mean));
    }
    for (Eigen::Index t = 0; t < C; ++t) {
      double sum = 0.0;
      long cnt = 0;
      for (Eigen::Index i = 0; i < R; ++i) {
        if (mask(i, t)) { sum += values(i, t); ++cnt; }
      }
      if (cnt == 0) continue;
      double mean = sum / static_cast<double>(cnt);
      for (Eigen::Index i = 0; i < R; ++i) {
        if (mask(i, t)) values(i, t) -= mean;
      }
      max_adj = std::max(max_adj, std::abs(mean));
    }
    if (max_adj < 1e-12) break;
  }

  double ss = 0.0;
  for (Eigen::Index i = 0; i < R; ++i) {
    for (Eigen::Index t = 0; t < C; ++t) {
      if (mask(i, t)) ss += values(i, t) * values(i, t);
    }
  }
  return TwoWayFit{ss / static_cast<double>(n_cells), n_cells};
}

EtaEstimate eta_from_fit(const TwoWayFit& fit, double n) {
  EtaEstimate out;
  out.sigma_sq = fit.sigma_sq;
  out.n_cells = fit.n_cells;
  out.eta = std::sqrt(fit.sigma_sq) / std::pow(n, 0.45);
  // A (numerically) zero residual would switch off the penalty entirely.
  if (!(out.eta >= 1e-12)) {
    out.eta = 1e-12;
    out.floored = true;
  }
  return out;
}

}  // namespace

EtaEstimate default_eta(const ValidatedPanel& panel) {
  const int T = panel.T();
  const int n = panel.n_units();
  Eigen::MatrixXd values(n, T);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(n, T);
  for (int i = 0; i < n; ++i) {
    const auto& u = panel.units()[static_cast<size_t>(i)];
    for (int t = 0; t < T; ++t) {
      values(i, t) = u.outcome[static_cast<size_t>(t)];
      mask(i, t) = static_cast<AdoptionTime>(t + 1) < u.adoption;
    }
  }
  return eta_from_fit(two_way_residual_variance(std::move(values), mask),
                      static_cast<double>(n));
}

EtaEstimate default_eta(const CohortPanel& panel) {
  const int R = panel.n_rows();
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(R, panel.T);
  for (int r = 0; r < R; ++r) {
    for (int t = 0; t < panel.T; ++t) {
      mask(r, t) = static_cast<AdoptionTime>(t + 1) < panel.rows[static_cast<size_t>(r)].adoption;
    }
  }
  return eta_from_fit(two_way_residual_variance(panel.Y, mask),
                      static_cast<double>(panel.n_units));
}

}  // namespace ssdid
