#include "ssdid/oracle.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssdid/balance.hpp"
#include "ssdid/rng.hpp"

namespace ssdid {

namespace {

constexpr double kRankTolerance = 1e-8;

void check_dims(const FactorStructure& f, const CohortPanel& panel) {
  if (f.r < 0) fail(errc::bad_config, "factor rank must be nonnegative");
  if (f.r == 0) return;
  if (f.theta.rows() != panel.n_rows() || f.theta.cols() != f.r) {
    fail(errc::bad_config, "loadings shape does not match the panel rows");
  }
  if (f.psi.rows() != panel.T || f.psi.cols() != f.r) {
    fail(errc::bad_config, "factors shape does not match the panel periods");
  }
}

// Rank of the row-demeaned stack with a relative singular-value cutoff.
std::pair<int, double> demeaned_rank(const Eigen::MatrixXd& stack, int want_rank) {
  if (stack.rows() == 0 || stack.cols() == 0) return {0, 0.0};
  Eigen::MatrixXd centered = stack.rowwise() - stack.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(0) > 0.0)) return {0, 0.0};
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > kRankTolerance * sv(0)) ++rank;
  }
  double min_sv = (want_rank >= 1 && sv.size() >= want_rank) ? sv(want_rank - 1) : 0.0;
  return {rank, min_sv};
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  }
  return out;
}

struct OracleCellWeights {
  WeightSolution omega;
  WeightSolution lambda;
};

OracleCellWeights solve_oracle_weights(const CohortPanel& panel, const FactorStructure& f,
                                       int row, int horizon) {
  const AdoptionTime a = panel.rows[static_cast<size_t>(row)].adoption;
  const long post = a + horizon;
  const int n_pre = static_cast<int>(post) - 1;
  std::vector<int> controls = panel.controls_after(a);
  if (controls.empty()) {
    fail(errc::no_controls, "no series adopts after cohort " + std::to_string(a));
  }
  const int J = static_cast<int>(controls.size());
  const int r = f.r;

  ExactBalanceProblem omega_p;
  omega_p.moment_matrix.resize(1 + r, J);
  omega_p.moment_target.resize(1 + r);
  omega_p.penalty_diag.resize(J);
  omega_p.moment_matrix.row(0).setOnes();
  omega_p.moment_target(0) = 1.0;
  for (int j = 0; j < J; ++j) {
    omega_p.penalty_diag(j) = 1.0 / panel.rows[static_cast<size_t>(controls[static_cast<size_t>(j)])].share;
    for (int m = 0; m < r; ++m) {
      omega_p.moment_matrix(1 + m, j) = f.theta(controls[static_cast<size_t>(j)], m);
    }
  }
  for (int m = 0; m < r; ++m) omega_p.moment_target(1 + m) = f.theta(row, m);

  ExactBalanceProblem lambda_p;
  lambda_p.moment_matrix.resize(1 + r, n_pre);
  lambda_p.moment_target.resize(1 + r);
  lambda_p.penalty_diag = Eigen::VectorXd::Ones(n_pre);
  lambda_p.moment_matrix.row(0).setOnes();
  lambda_p.moment_target(0) = 1.0;
  for (int l = 0; l < n_pre; ++l) {
    for (int m = 0; m < r; ++m) lambda_p.moment_matrix(1 + m, l) = f.psi(l, m);
  }
  for (int m = 0; m < r; ++m) lambda_p.moment_target(1 + m) = f.psi(post - 1, m);

  return OracleCellWeights{solve_exact_balance(omega_p), solve_exact_balance(lambda_p)};
}

double double_difference(const CohortPanel& working, int row, int horizon,
                         const std::vector<int>& controls, const Eigen::VectorXd& omega,
                         const Eigen::VectorXd& lambda) {
  const AdoptionTime a = working.rows[static_cast<size_t>(row)].adoption;
  const long post = a + horizon;
  const int n_pre = static_cast<int>(post) - 1;
  double controls_post = 0.0;
  for (size_t j = 0; j < controls.size(); ++j) {
    controls_post += omega(static_cast<Eigen::Index>(j)) * working.Y(controls[j], post - 1);
  }
  double pre_gap = 0.0;
  for (int l = 0; l < n_pre; ++l) {
    double controls_pre = 0.0;
    for (size_t j = 0; j < controls.size(); ++j) {
      controls_pre += omega(static_cast<Eigen::Index>(j)) * working.Y(controls[j], l);
    }
    pre_gap += lambda(l) * (working.Y(row, l) - controls_pre);
  }
  return (working.Y(row, post - 1) - controls_post) - pre_gap;
}

void validate_oracle_config(const CohortPanel& panel, const OracleConfig& cfg) {
  if (cfg.t_star < 2) fail(errc::bad_config, "t_star must be >= 2 (one pre-period required)");
  if (cfg.a_star < cfg.t_star) fail(errc::bad_config, "a_star must be >= t_star");
  if (cfg.a_star > panel.T) fail(errc::bad_config, "a_star exceeds T");
}

}  // namespace

AffineHullReport check_affine_hull(const FactorStructure& f, const CohortPanel& panel,
                                   const OracleConfig& cfg) {
  check_dims(f, panel);
  AffineHullReport rep;
  rep.required_rank = f.r;
  std::vector<int> controls = panel.controls_after(cfg.a_star);
  rep.n_controls = static_cast<int>(controls.size());
  rep.n_pre_periods = cfg.t_star - 1;

  if (f.r == 0) {
    rep.ok = rep.loadings_ok = rep.factors_ok = true;
    return rep;
  }

  auto [lrank, lmin] = demeaned_rank(gather_rows(f.theta, controls), f.r);
  rep.loadings_rank = lrank;
  rep.loadings_min_sv = lmin;
  rep.loadings_ok = lrank >= f.r;

  auto [frank, fmin] = demeaned_rank(f.psi.topRows(cfg.t_star - 1), f.r);
  rep.factors_rank = frank;
  rep.factors_min_sv = fmin;
  rep.factors_ok = frank >= f.r;

  rep.ok = rep.loadings_ok && rep.factors_ok;
  return rep;
}

EstimateGrid run_sequential_ols(const CohortPanel& panel, const FactorStructure& f,
                                const OracleConfig& cfg) {
  panel.check_invariants();
  check_dims(f, panel);
  validate_oracle_config(panel, cfg);
  AffineHullReport hull = check_affine_hull(f, panel, cfg);
  if (!hull.ok) {
    fail(errc::infeasible_constraints, "affine hull condition fails for (a_star=" +
                                           std::to_string(cfg.a_star) + ", t_star=" +
                                           std::to_string(cfg.t_star) + ")");
  }

  std::vector<int> grid_rows;
  for (int r = 0; r < panel.n_rows(); ++r) {
    AdoptionTime a = panel.rows[static_cast<size_t>(r)].adoption;
    if (!is_never_treated(a) && a >= cfg.t_star && a <= cfg.a_star) grid_rows.push_back(r);
  }
  if (grid_rows.empty()) {
    fail(errc::bad_config, "no cohort falls in [t_star, a_star]");
  }

  EstimateGrid grid;
  grid.kind = EstimatorKind::seq_ols;
  grid.k_max = static_cast<int>(cfg.a_star) - cfg.t_star;
  grid.grid_rows = grid_rows;
  for (int r : grid_rows) grid.row_labels.push_back(panel.rows[static_cast<size_t>(r)].label);

  CohortPanel working = panel;

  std::vector<std::pair<AdoptionTime, std::vector<int>>> steps;
  for (int r : grid_rows) {
    AdoptionTime a = panel.rows[static_cast<size_t>(r)].adoption;
    if (steps.empty() || steps.back().first != a) steps.push_back({a, {}});
    steps.back().second.push_back(r);
  }

  for (int k = 0; k <= grid.k_max; ++k) {
    for (auto& [a, rows_a] : steps) {
      if (a + k > cfg.a_star) continue;
      std::vector<CellEstimate> batch;
      for (int row : rows_a) {
        OracleCellWeights w = solve_oracle_weights(working, f, row, k);
        std::vector<int> controls = working.controls_after(a);
        CellEstimate cell;
        cell.row = row;
        cell.cohort = a;
        cell.horizon = k;
        cell.tau_hat = double_difference(working, row, k, controls, w.omega.weights,
                                         w.lambda.weights);
        cell.omega = std::move(w.omega);
        cell.lambda = std::move(w.lambda);
        batch.push_back(std::move(cell));
      }
      for (auto& cell : batch) {
        working.Y(cell.row, a + k - 1) -= cell.tau_hat;
        grid.cells.push_back(std::move(cell));
      }
    }
  }

  std::sort(grid.cells.begin(), grid.cells.end(), [](const CellEstimate& x, const CellEstimate& y) {
    if (x.row != y.row) return x.row < y.row;
    return x.horizon < y.horizon;
  });
  grid.imputed_panel = std::move(working);
  grid.tau_by_horizon = aggregate_horizon(grid, {});
  return grid;
}

EstimateGrid run_joint_ols(const CohortPanel& panel, const FactorStructure& f,
                           const OracleConfig& cfg, std::uint64_t column_shuffle_seed) {
  panel.check_invariants();
  check_dims(f, panel);
  validate_oracle_config(panel, cfg);

  const int R = panel.n_rows();
  const int T = panel.T;
  const int r = f.r;

  // Column layout: alpha_rho | beta_t | phi_{t,m} | nu_{rho,m} | tau cells.
  struct TauCol {
    int row;
    int horizon;
  };
  std::vector<TauCol> tau_cols;
  for (int rho = 0; rho < R; ++rho) {
    AdoptionTime a = panel.rows[static_cast<size_t>(rho)].adoption;
    if (is_never_treated(a)) continue;
    for (long t = a; t <= T; ++t) {
      tau_cols.push_back(TauCol{rho, static_cast<int>(t - a)});
    }
  }
  const int n_obs = R * T;
  const int n_cols = R + T + r * T + r * R + static_cast<int>(tau_cols.size());

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n_obs, n_cols);
  Eigen::VectorXd y(n_obs);
  const int phi_base = R + T;
  const int nu_base = phi_base + r * T;
  const int tau_base = nu_base + r * R;

  int obs = 0;
  for (int rho = 0; rho < R; ++rho) {
    double sw = std::sqrt(panel.rows[static_cast<size_t>(rho)].share);
    AdoptionTime a = panel.rows[static_cast<size_t>(rho)].adoption;
    for (int t = 0; t < T; ++t, ++obs) {
      y(obs) = sw * panel.Y(rho, t);
      A(obs, rho) = sw;
      A(obs, R + t) = sw;
      for (int m = 0; m < r; ++m) {
        A(obs, phi_base + t * r + m) = sw * f.theta(rho, m);
        A(obs, nu_base + rho * r + m) = sw * f.psi(t, m);
      }
      if (!is_never_treated(a) && t + 1 >= a) {
        // one dummy per treated cell
        auto it = std::find_if(tau_cols.begin(), tau_cols.end(), [&](const TauCol& c) {
          return c.row == rho && c.horizon == t + 1 - static_cast<int>(a);
        });
        A(obs, tau_base + static_cast<int>(it - tau_cols.begin())) = sw;
      }
    }
  }

  std::vector<int> perm(static_cast<size_t>(n_cols));
  std::iota(perm.begin(), perm.end(), 0);
  if (column_shuffle_seed != 0) {
    CounterRng rng(column_shuffle_seed, 0x70657263ull);
    for (size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.next_below(i)]);
    }
    Eigen::MatrixXd shuffled(n_obs, n_cols);
    for (int c = 0; c < n_cols; ++c) shuffled.col(c) = A.col(perm[static_cast<size_t>(c)]);
    A = std::move(shuffled);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  double cutoff = sv.size() > 0 ? sv(0) * 1e-10 : 0.0;
  Eigen::VectorXd uT_y = svd.matrixU().transpose() * y;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) scaled(i) = uT_y(i) / sv(i);
  }
  Eigen::VectorXd coef_shuffled = svd.matrixV() * scaled;
  Eigen::VectorXd coef(n_cols);
  for (int c = 0; c < n_cols; ++c) coef(perm[static_cast<size_t>(c)]) = coef_shuffled(c);

  EstimateGrid grid;
  grid.kind = EstimatorKind::joint_ols;
  grid.k_max = 0;
  for (int rho = 0; rho < R; ++rho) {
    AdoptionTime a = panel.rows[static_cast<size_t>(rho)].adoption;
    if (is_never_treated(a)) continue;
    bool any = false;
    for (size_t c = 0; c < tau_cols.size(); ++c) {
      if (tau_cols[c].row != rho) continue;
      long event = a + tau_cols[c].horizon;
      if (event < cfg.t_star || event > cfg.a_star) continue;
      CellEstimate cell;
      cell.row = rho;
      cell.cohort = a;
      cell.horizon = tau_cols[c].horizon;
      cell.tau_hat = coef(tau_base + static_cast<int>(c));
      grid.k_max = std::max(grid.k_max, cell.horizon);
      grid.cells.push_back(std::move(cell));
      any = true;
    }
    if (any) {
      grid.grid_rows.push_back(rho);
      grid.row_labels.push_back(panel.rows[static_cast<size_t>(rho)].label);
    }
  }
  if (grid.cells.empty()) {
    fail(errc::bad_config, "no treated cell falls in [t_star, a_star]");
  }
  grid.imputed_panel = panel;  // joint path does not impute
  grid.tau_by_horizon = aggregate_horizon(grid, {});
  return grid;
}

FactorDiagnostics factor_diagnostics(const FactorStructure& f, const CohortPanel& panel,
                                     AdoptionTime a, int k) {
  check_dims(f, panel);
  std::vector<int> controls = panel.controls_after(a);
  const int n_pre = static_cast<int>(a) + k - 1;
  if (controls.empty() || n_pre < 1) {
    fail(errc::bad_config, "cell has no controls or no pre-periods");
  }

  FactorDiagnostics out;
  out.no_factors = f.r == 0;
  out.L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(controls.size()), n_pre);
  if (f.r > 0) {
    Eigen::MatrixXd theta_c = gather_rows(f.theta, controls);
    Eigen::RowVectorXd theta_bar = theta_c.colwise().mean();
    Eigen::MatrixXd psi_pre = f.psi.topRows(n_pre);
    Eigen::RowVectorXd psi_bar = psi_pre.colwise().mean();
    out.L = (theta_c.rowwise() - theta_bar) * (psi_pre.rowwise() - psi_bar).transpose();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.L);
    const auto& sv = svd.singularValues();
    double top = sv.size() > 0 ? sv(0) : 0.0;
    double smallest = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv(i) > 1e-12 * top && top > 0.0) smallest = sv(i);
    }
    out.sigma_tilde = smallest;
  }
  out.sqrt_n_ratio = out.sigma_tilde * std::sqrt(static_cast<double>(panel.n_units));
  return out;
}

std::optional<OracleConfig> tightest_oracle_bounds(const FactorStructure& f,
                                                   const CohortPanel& panel) {
  check_dims(f, panel);

  auto loadings_span = [&](AdoptionTime a_star) {
    if (f.r == 0) return !panel.controls_after(a_star).empty();
    auto [rank, sv] = demeaned_rank(gather_rows(f.theta, panel.controls_after(a_star)), f.r);
    (void)sv;
    return rank >= f.r;
  };
  auto factors_span = [&](int t_star) {
    if (f.r == 0) return true;
    auto [rank, sv] = demeaned_rank(f.psi.topRows(t_star - 1), f.r);
    (void)sv;
    return rank >= f.r;
  };

  int t_star = 0;
  for (int t = 2; t <= panel.T; ++t) {
    if (factors_span(t)) {
      t_star = t;
      break;
    }
  }
  if (t_star == 0) return std::nullopt;

  for (AdoptionTime a = panel.T; a >= t_star; --a) {
    if (loadings_span(a)) return OracleConfig{a, t_star};
  }
  return std::nullopt;
}

}  // namespace ssdid
