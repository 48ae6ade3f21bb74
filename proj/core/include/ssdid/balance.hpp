#pragma once

#include <Eigen/Dense>
#include <optional>

#include "ssdid/errors.hpp"

namespace ssdid {

// Ridge penalty strength. INF is symbolic (never a floating-point infinity):
// it selects the closed-form penalty-only minimizer.
struct Eta {
  static Eta value(double v) { return Eta{false, v}; }
  static Eta inf() { return Eta{true, 0.0}; }

  bool is_inf = false;
  double val = 0.0;
};

// min over (w, w0) of ||predictors*w + w0*1 - target||^2 + eta^2 * sum_j d_j w_j^2
// subject to sum_j w_j = 1, with the intercept w0 free and unpenalized.
struct RidgeBalanceProblem {
  Eigen::MatrixXd predictors;   // fit rows x series columns
  Eigen::VectorXd target;       // fit rows
  Eigen::VectorXd penalty_diag; // d_j per column, nonnegative
  Eta eta = Eta::value(1.0);
};

// min over w of sum_j d_j w_j^2 subject to moment_matrix * w = moment_target.
// Row 0 of the moment system is the all-ones (sum-to-one) constraint.
struct ExactBalanceProblem {
  Eigen::MatrixXd moment_matrix;  // constraints x series columns
  Eigen::VectorXd moment_target;
  Eigen::VectorXd penalty_diag;
};

struct WeightSolution {
  Eigen::VectorXd weights;           // sums to 1
  std::optional<double> intercept;   // absent for exact problems
  double imbalance = 0.0;            // residual norm of the fit / moment equations
  double penalty_value = 0.0;        // sum_j d_j w_j^2 (without the eta^2 factor)
};

WeightSolution solve_ridge_balance(const RidgeBalanceProblem& p);

WeightSolution solve_exact_balance(const ExactBalanceProblem& p);

// Solves the symmetric system A x = b. Singular systems fall back to the
// minimum-norm least-squares solution with relative rank tolerance 1e-10.
Eigen::VectorXd solve_kkt(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

}  // namespace ssdid
