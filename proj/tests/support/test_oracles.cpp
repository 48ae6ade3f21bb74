#include "test_oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace testsupport {

Eigen::VectorXd gaussian_solve(Eigen::MatrixXd A, Eigen::VectorXd b) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || b.size() != n) throw std::invalid_argument("gaussian_solve: shape");
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index pivot = col;
    for (Eigen::Index r = col + 1; r < n; ++r) {
      if (std::abs(A(r, col)) > std::abs(A(pivot, col))) pivot = r;
    }
    if (std::abs(A(pivot, col)) < 1e-300) throw std::runtime_error("gaussian_solve: singular");
    if (pivot != col) {
      A.row(pivot).swap(A.row(col));
      std::swap(b(pivot), b(col));
    }
    for (Eigen::Index r = col + 1; r < n; ++r) {
      double f = A(r, col) / A(col, col);
      A.row(r).tail(n - col) -= f * A.row(col).tail(n - col);
      b(r) -= f * b(col);
    }
  }
  Eigen::VectorXd x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    double s = b(r);
    for (Eigen::Index c = r + 1; c < n; ++c) s -= A(r, c) * x(c);
    x(r) = s / A(r, r);
  }
  return x;
}

JacobiSvd jacobi_svd(const Eigen::MatrixXd& A) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  Eigen::MatrixXd U = A;
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n);

  const double eps = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        double app = U.col(p).squaredNorm();
        double aqq = U.col(q).squaredNorm();
        double apq = U.col(p).dot(U.col(q));
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
        off = std::max(off, std::abs(apq) / std::sqrt(std::max(app * aqq, 1e-300)));
        double zeta = (aqq - app) / (2.0 * apq);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (Eigen::Index i = 0; i < m; ++i) {
          double up = U(i, p), uq = U(i, q);
          U(i, p) = c * up - s * uq;
          U(i, q) = s * up + c * uq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          double vp = V(i, p), vq = V(i, q);
          V(i, p) = c * vp - s * vq;
          V(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-14) break;
  }

  JacobiSvd out;
  out.sigma.resize(n);
  out.U.resize(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double norm = U.col(j).norm();
    out.sigma(j) = norm;
    out.U.col(j) = norm > 1e-300 ? (U.col(j) / norm).eval() : Eigen::VectorXd::Zero(m).eval();
  }
  out.V = V;

  // Sort descending.
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return out.sigma(a) > out.sigma(b); });
  JacobiSvd sorted;
  sorted.U.resize(m, n);
  sorted.V.resize(n, n);
  sorted.sigma.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    sorted.U.col(j) = out.U.col(order[static_cast<size_t>(j)]);
    sorted.V.col(j) = out.V.col(order[static_cast<size_t>(j)]);
    sorted.sigma(j) = out.sigma(order[static_cast<size_t>(j)]);
  }
  return sorted;
}

Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double rel_tol) {
  JacobiSvd svd = jacobi_svd(A);
  double top = svd.sigma.size() > 0 ? svd.sigma(0) : 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(A.cols());
  for (Eigen::Index j = 0; j < svd.sigma.size(); ++j) {
    if (svd.sigma(j) > rel_tol * top && svd.sigma(j) > 0.0) {
      x += svd.V.col(j) * (svd.U.col(j).dot(b) / svd.sigma(j));
    }
  }
  return x;
}

int svd_rank(const Eigen::MatrixXd& A, double rel_tol) {
  if (A.rows() == 0 || A.cols() == 0) return 0;
  JacobiSvd svd = jacobi_svd(A);
  double top = svd.sigma.size() > 0 ? svd.sigma(0) : 0.0;
  if (!(top > 0.0)) return 0;
  int rank = 0;
  for (Eigen::Index j = 0; j < svd.sigma.size(); ++j) {
    if (svd.sigma(j) > rel_tol * top) ++rank;
  }
  return rank;
}

RidgeOracleResult ridge_balance_oracle(const Eigen::MatrixXd& P, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& penalty_diag, double eta) {
  const Eigen::Index R = P.rows();
  const Eigen::Index J = P.cols();
  // Free variables v = (w_1 .. w_{J-1}, w0); w_J = 1 - sum_i w_i.
  // Fit rows:      P v-part + last column folded in.
  // Penalty rows:  eta * sqrt(d_j) * w_j for every j.
  const Eigen::Index rows = R + J;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(rows, J);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows);
  for (Eigen::Index l = 0; l < R; ++l) {
    for (Eigen::Index i = 0; i < J - 1; ++i) D(l, i) = P(l, i) - P(l, J - 1);
    D(l, J - 1) = 1.0;  // intercept
    rhs(l) = y(l) - P(l, J - 1);
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    double root = eta * std::sqrt(penalty_diag(j));
    Eigen::Index row = R + j;
    if (j + 1 < J) {
      D(row, j) = root;
    } else {
      for (Eigen::Index i = 0; i < J - 1; ++i) D(row, i) = -root;
      rhs(row) = -root;  // root * w_J = root * (1 - sum) -> move constant
    }
  }
  Eigen::MatrixXd gram = D.transpose() * D;
  Eigen::VectorXd v = gaussian_solve(gram, D.transpose() * rhs);

  RidgeOracleResult out;
  out.weights.resize(J);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < J - 1; ++i) {
    out.weights(i) = v(i);
    sum += v(i);
  }
  out.weights(J - 1) = 1.0 - sum;
  out.intercept = v(J - 1);
  return out;
}

PlainDidResult plain_did_imputation(const ssdid::CohortPanel& panel, ssdid::AdoptionTime a_min,
                                    ssdid::AdoptionTime a_max, int k_max) {
  PlainDidResult out;
  std::vector<int> rows;
  for (int r = 0; r < panel.n_rows(); ++r) {
    ssdid::AdoptionTime a = panel.rows[static_cast<size_t>(r)].adoption;
    if (!ssdid::is_never_treated(a) && a >= a_min && a <= a_max) {
      rows.push_back(r);
      out.cohorts.push_back(a);
      out.tau.emplace_back(static_cast<size_t>(k_max) + 1, 0.0);
    }
  }

  Eigen::MatrixXd Y = panel.Y;
  for (int k = 0; k <= k_max; ++k) {
    for (size_t idx = 0; idx < rows.size(); ++idx) {
      int row = rows[idx];
      ssdid::AdoptionTime a = out.cohorts[idx];
      long post = a + k;
      std::vector<int> controls;
      double share_sum = 0.0;
      for (int j = 0; j < panel.n_rows(); ++j) {
        if (panel.rows[static_cast<size_t>(j)].adoption > a) {
          controls.push_back(j);
          share_sum += panel.rows[static_cast<size_t>(j)].share;
        }
      }
      double treated_post = Y(row, post - 1);
      double control_post = 0.0;
      for (int j : controls) {
        control_post += panel.rows[static_cast<size_t>(j)].share / share_sum * Y(j, post - 1);
      }
      double pre_gap = 0.0;
      for (long l = 0; l < post - 1; ++l) {
        double control_pre = 0.0;
        for (int j : controls) {
          control_pre += panel.rows[static_cast<size_t>(j)].share / share_sum * Y(j, l);
        }
        pre_gap += (Y(row, l) - control_pre) / static_cast<double>(post - 1);
      }
      double tau = (treated_post - control_post) - pre_gap;
      out.tau[idx][static_cast<size_t>(k)] = tau;
      Y(row, post - 1) -= tau;
    }
  }
  return out;
}

}  // namespace testsupport
