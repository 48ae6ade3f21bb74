#include "ssdid/balance.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace ssdid {

namespace {

constexpr double kRankTol = 1e-10;

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) fail(errc::non_finite_input, std::string(what) + " contains non-finite values");
}

// Minimum-norm least-squares solve via SVD with relative singular-value cutoff.
Eigen::VectorXd svd_min_norm(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  double cutoff = sv.size() > 0 ? sv(0) * tol : 0.0;
  Eigen::VectorXd uT_b = svd.matrixU().transpose() * b;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) scaled(i) = uT_b(i) / sv(i);
  }
  return svd.matrixV() * scaled;
}

struct RidgeSolve {
  Eigen::VectorXd weights;
  double intercept;
};

// The equality-constrained quadratic solved through its KKT system
//   [ H  c ] [x]   [g]        H = M'M + eta^2 * diag(d, 0),  M = [P 1],
//   [ c' 0 ] [m] = [1]        c = (1..1, 0)',                g = M'y.
// The fast path factors H (positive definite for eta > 0) and solves by the
// Schur complement; if that is inaccurate the SVD min-norm path takes over.
RidgeSolve solve_ridge_kkt(const Eigen::MatrixXd& P, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& d, double eta) {
  const Eigen::Index J = P.cols();
  const Eigen::Index R = P.rows();
  const Eigen::Index n = J + 1;

  Eigen::MatrixXd M(R, n);
  M.leftCols(J) = P;
  M.col(J).setOnes();

  Eigen::MatrixXd H = M.transpose() * M;
  for (Eigen::Index j = 0; j < J; ++j) H(j, j) += eta * eta * d(j);
  Eigen::VectorXd g = M.transpose() * y;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  c.head(J).setOnes();

  Eigen::VectorXd x;
  bool fast_ok = false;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() == Eigen::Success) {
    Eigen::VectorXd hg = ldlt.solve(g);
    Eigen::VectorXd hc = ldlt.solve(c);
    double schur = c.dot(hc);
    if (std::abs(schur) > 1e-300) {
      double m = (c.dot(hg) - 1.0) / schur;
      x = hg - m * hc;
      // One refinement pass against the augmented system; the factorization of
      // an ill-conditioned H (tiny eta) otherwise loses too many digits.
      for (int pass = 0; pass < 2; ++pass) {
        Eigen::VectorXd rx = g - H * x - c * m;
        double rm = 1.0 - c.dot(x);
        Eigen::VectorXd dx = ldlt.solve(rx);
        double dm = (c.dot(dx) - rm) / schur;
        x += dx - dm * hc;
        m += dm;
      }
      double scale = std::max(1.0, std::max(g.cwiseAbs().maxCoeff(), H.cwiseAbs().maxCoeff()));
      double resid = std::max((g - H * x - c * m).cwiseAbs().maxCoeff(),
                              std::abs(1.0 - c.dot(x)) * scale);
      fast_ok = resid <= 1e-8 * scale && x.allFinite();
    }
  }

  if (!fast_ok) {
    Eigen::MatrixXd K(n + 1, n + 1);
    K.topLeftCorner(n, n) = H;
    K.topRightCorner(n, 1) = c;
    K.bottomLeftCorner(1, n) = c.transpose();
    K(n, n) = 0.0;
    Eigen::VectorXd rhs(n + 1);
    rhs.head(n) = g;
    rhs(n) = 1.0;
    Eigen::VectorXd full = svd_min_norm(K, rhs, kRankTol);
    double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
    if ((K * full - rhs).cwiseAbs().maxCoeff() > 1e-6 * scale) {
      fail(errc::singular_system, "ridge KKT system is rank-deficient beyond tolerance");
    }
    x = full.head(n);
  }

  return RidgeSolve{x.head(J), x(J)};
}

}  // namespace

WeightSolution solve_ridge_balance(const RidgeBalanceProblem& p) {
  require_finite(p.predictors, "predictors");
  require_finite(p.target, "target");
  require_finite(p.penalty_diag, "penalty_diag");
  const Eigen::Index J = p.predictors.cols();
  if (J < 1) fail(errc::non_finite_input, "ridge problem needs at least one column");
  if (p.target.size() != p.predictors.rows()) {
    fail(errc::non_finite_input, "ridge problem row mismatch");
  }
  if (p.penalty_diag.size() != J) fail(errc::non_finite_input, "penalty_diag length mismatch");
  if ((p.penalty_diag.array() < 0.0).any()) {
    fail(errc::non_finite_input, "penalty_diag must be nonnegative");
  }
  if (!p.eta.is_inf && !(p.eta.val > 0.0)) {
    fail(errc::non_finite_input, "eta must be positive or INF");
  }

  WeightSolution out;
  if (p.eta.is_inf) {
    // Penalty-only minimizer: w_j proportional to 1/d_j, intercept the mean
    // fit residual. A zero penalty entry would make the limit ill-defined.
    if ((p.penalty_diag.array() <= 0.0).any()) {
      fail(errc::non_finite_input, "eta = INF requires strictly positive penalties");
    }
    Eigen::VectorXd inv = p.penalty_diag.cwiseInverse();
    out.weights = inv / inv.sum();
    double w0 = 0.0;
    if (p.predictors.rows() > 0) {
      w0 = (p.target - p.predictors * out.weights).mean();
    }
    out.intercept = w0;
  } else {
    RidgeSolve s = solve_ridge_kkt(p.predictors, p.target, p.penalty_diag, p.eta.val);
    out.weights = s.weights;
    out.intercept = s.intercept;
  }

  Eigen::VectorXd resid = p.predictors * out.weights;
  resid.array() += *out.intercept;
  resid -= p.target;
  out.imbalance = resid.norm();
  out.penalty_value = (p.penalty_diag.array() * out.weights.array().square()).sum();
  return out;
}

WeightSolution solve_exact_balance(const ExactBalanceProblem& p) {
  require_finite(p.moment_matrix, "moment_matrix");
  require_finite(p.moment_target, "moment_target");
  require_finite(p.penalty_diag, "penalty_diag");
  const Eigen::Index J = p.moment_matrix.cols();
  const Eigen::Index m = p.moment_matrix.rows();
  if (J < 1 || m < 1) fail(errc::non_finite_input, "exact balance problem is empty");
  if (p.moment_target.size() != m) fail(errc::non_finite_input, "moment target length mismatch");
  if (p.penalty_diag.size() != J || (p.penalty_diag.array() <= 0.0).any()) {
    fail(errc::non_finite_input, "exact balance needs strictly positive penalties");
  }

  // KKT of min w'Dw s.t. Mw = m, reduced to its Schur complement
  //   (M D^-1 M') z = m,  w = D^-1 M' z,
  // so the rank decision compares constraint directions against each other
  // rather than against the penalty block. Redundant constraints get the
  // min-norm multiplier through the same symmetric solver.
  Eigen::VectorXd d_inv = p.penalty_diag.cwiseInverse();
  Eigen::MatrixXd schur = p.moment_matrix * d_inv.asDiagonal() * p.moment_matrix.transpose();
  Eigen::VectorXd z = solve_kkt(schur, p.moment_target);
  Eigen::VectorXd w = d_inv.asDiagonal() * (p.moment_matrix.transpose() * z);

  Eigen::VectorXd gap = p.moment_matrix * w - p.moment_target;
  double scale = std::max(1.0, p.moment_target.cwiseAbs().maxCoeff());
  if (gap.norm() > 1e-8 * scale) {
    fail(errc::infeasible_constraints,
         "moment target lies outside the affine span of the series (residual " +
             std::to_string(gap.norm()) + ")");
  }

  WeightSolution out;
  out.weights = std::move(w);
  out.imbalance = gap.norm();
  out.penalty_value = (p.penalty_diag.array() * out.weights.array().square()).sum();
  return out;
}

Eigen::VectorXd solve_kkt(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  require_finite(A, "matrix");
  require_finite(b, "rhs");
  if (A.rows() != A.cols() || A.rows() != b.size()) {
    fail(errc::non_finite_input, "solve_kkt expects a square system");
  }
  return svd_min_norm(A, b, kRankTol);
}

}  // namespace ssdid
