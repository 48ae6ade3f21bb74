#include <doctest.h>

#include <cmath>

#include "builders.hpp"
#include "ssdid/estimator.hpp"
#include "ssdid/oracle.hpp"
#include "test_oracles.hpp"
#include "test_util.hpp"

using namespace ssdid;
using testsupport::InstanceOptions;
using testsupport::make_aggregate_instance;

namespace {

InstanceOptions feasible_options(int r, std::uint64_t seed, double noise_sd) {
  InstanceOptions opt;
  opt.adoptions = {4, 5, 6, kNeverTreated, kNeverTreated, kNeverTreated, kNeverTreated};
  opt.T = 12;
  opt.r = r;
  opt.noise_sd = noise_sd;
  opt.heterogeneous_tau = true;
  opt.seed = seed;
  return opt;
}

}  // namespace

TEST_CASE("affine hull checks") {
  SUBCASE("r = 0 is vacuous") {
    auto inst = make_aggregate_instance(feasible_options(0, 2, 0.0));
    AffineHullReport rep = check_affine_hull(inst.factors, inst.panel, OracleConfig{6, 3});
    CHECK(rep.ok);
  }
  SUBCASE("identical control loadings fail") {
    auto inst = make_aggregate_instance(feasible_options(1, 3, 0.0));
    for (int i = 0; i < inst.panel.n_rows(); ++i) inst.factors.theta(i, 0) = 2.0;
    AffineHullReport rep = check_affine_hull(inst.factors, inst.panel, OracleConfig{6, 4});
    CHECK(!rep.ok);
    CHECK(!rep.loadings_ok);
  }
  SUBCASE("generic rank-2 structure passes and ranks match an independent SVD") {
    auto inst = make_aggregate_instance(feasible_options(2, 4, 0.0));
    OracleConfig cfg{6, 4};
    AffineHullReport rep = check_affine_hull(inst.factors, inst.panel, cfg);
    CHECK(rep.ok);

    auto controls = inst.panel.controls_after(cfg.a_star);
    Eigen::MatrixXd stack(controls.size(), 2);
    for (size_t i = 0; i < controls.size(); ++i) stack.row(i) = inst.factors.theta.row(controls[i]);
    Eigen::MatrixXd centered = stack.rowwise() - stack.colwise().mean();
    CHECK(testsupport::svd_rank(centered, 1e-8) == rep.loadings_rank);
  }
}

TEST_CASE("factor-free oracle equals INF sequential DiD") {
  auto inst = make_aggregate_instance(feasible_options(0, 7, 0.4));
  auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
  REQUIRE(bounds.has_value());
  CHECK(bounds->t_star == 2);
  CHECK(bounds->a_star == 12);
  EstimateGrid oracle = run_sequential_ols(inst.panel, inst.factors, *bounds);
  EstimateGrid did = run_sequential(inst.panel, [] {
    SsdidConfig cfg;
    cfg.a_min = 4;
    cfg.a_max = 6;
    cfg.k_max = 6;
    cfg.eta = EtaSpec::inf();
    return cfg;
  }());
  for (const auto& cell : did.cells) {
    const CellEstimate* ref = oracle.find(cell.row, cell.horizon);
    REQUIRE(ref != nullptr);
    CHECK(std::abs(cell.tau_hat - ref->tau_hat) < 1e-10);
  }
}

TEST_CASE("oracles recover true effects exactly at zero noise") {
  for (int r : {1, 2}) {
    auto inst = make_aggregate_instance(feasible_options(r, 11 + static_cast<unsigned>(r), 0.0));
    auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
    REQUIRE(bounds.has_value());
    EstimateGrid seq = run_sequential_ols(inst.panel, inst.factors, *bounds);
    for (const auto& cell : seq.cells) {
      CHECK(std::abs(cell.tau_hat - inst.tau(cell.cohort, cell.horizon)) < 1e-10);
    }
    EstimateGrid joint = run_joint_ols(inst.panel, inst.factors, *bounds);
    for (const auto& cell : joint.cells) {
      CHECK(std::abs(cell.tau_hat - inst.tau(cell.cohort, cell.horizon)) < 1e-9);
    }
  }
}

TEST_CASE("sequential and joint oracle paths agree on noisy draws") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    int r = static_cast<int>(seed % 3);
    auto inst = make_aggregate_instance(feasible_options(r, 100 + seed, 0.5));
    auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
    REQUIRE(bounds.has_value());
    EstimateGrid seq = run_sequential_ols(inst.panel, inst.factors, *bounds);
    EstimateGrid joint = run_joint_ols(inst.panel, inst.factors, *bounds);
    for (const auto& cell : seq.cells) {
      const CellEstimate* other = joint.find(cell.row, cell.horizon);
      REQUIRE(other != nullptr);
      CHECK(std::abs(cell.tau_hat - other->tau_hat) < 1e-8);
    }
  }
}

TEST_CASE("joint oracle is invariant to design column order") {
  auto inst = make_aggregate_instance(feasible_options(2, 55, 0.6));
  auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
  REQUIRE(bounds.has_value());
  EstimateGrid natural = run_joint_ols(inst.panel, inst.factors, *bounds, 0);
  for (std::uint64_t shuffle : {1ull, 2ull, 3ull}) {
    EstimateGrid permuted = run_joint_ols(inst.panel, inst.factors, *bounds, shuffle);
    REQUIRE(permuted.cells.size() == natural.cells.size());
    for (size_t i = 0; i < natural.cells.size(); ++i) {
      CHECK(std::abs(natural.cells[i].tau_hat - permuted.cells[i].tau_hat) < 1e-8);
    }
  }
}

TEST_CASE("unit weights do not depend on the horizon") {
  auto inst = make_aggregate_instance(feasible_options(2, 77, 0.3));
  auto bounds = tightest_oracle_bounds(inst.factors, inst.panel);
  REQUIRE(bounds.has_value());
  EstimateGrid seq = run_sequential_ols(inst.panel, inst.factors, *bounds);
  for (int row : seq.grid_rows) {
    const CellEstimate* base = seq.find(row, 0);
    REQUIRE(base != nullptr);
    for (const auto& cell : seq.cells) {
      if (cell.row != row || cell.horizon == 0) continue;
      CHECK((cell.omega.weights - base->omega.weights).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("factor diagnostics") {
  SUBCASE("r = 0 reports the no-factor flag") {
    auto inst = make_aggregate_instance(feasible_options(0, 5, 0.0));
    FactorDiagnostics d = factor_diagnostics(inst.factors, inst.panel, 4, 0);
    CHECK(d.no_factors);
    CHECK(d.sigma_tilde == 0.0);
    CHECK(d.L.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rank-1 outer product") {
    CohortPanel panel;
    panel.T = 3;
    panel.n_units = 4;
    panel.rows = {CohortRow{3, "3", 0.4, 1, 1}, CohortRow{kNeverTreated, "inf:a", 0.3, 1, 1},
                  CohortRow{kNeverTreated, "inf:b", 0.3, 1, 1}};
    panel.Y = Eigen::MatrixXd::Zero(3, 3);
    FactorStructure f;
    f.r = 1;
    f.theta.resize(3, 1);
    f.theta << 0.0, 1.0, -1.0;  // controls demean to (1, -1)
    f.psi.resize(3, 1);
    f.psi << 2.0, -2.0, 0.0;  // pre-periods demean to (2, -2)
    FactorDiagnostics d = factor_diagnostics(f, panel, 3, 0);
    CHECK(d.L(0, 0) == doctest::Approx(2.0));
    CHECK(d.L(0, 1) == doctest::Approx(-2.0));
    CHECK(d.L(1, 0) == doctest::Approx(-2.0));
    CHECK(d.L(1, 1) == doctest::Approx(2.0));
    CHECK(d.sigma_tilde == doctest::Approx(4.0));
    CHECK(d.sqrt_n_ratio == doctest::Approx(8.0));  // sigma * sqrt(4)
  }
  SUBCASE("random rank-2 structure matches the independent SVD") {
    auto inst = make_aggregate_instance(feasible_options(2, 91, 0.0));
    FactorDiagnostics d = factor_diagnostics(inst.factors, inst.panel, 5, 2);
    auto svd = testsupport::jacobi_svd(d.L);
    double smallest = 0.0;
    for (Eigen::Index i = 0; i < svd.sigma.size(); ++i) {
      if (svd.sigma(i) > 1e-12 * svd.sigma(0)) smallest = svd.sigma(i);
    }
    CHECK(d.sigma_tilde == doctest::Approx(smallest).epsilon(1e-10));
  }
}
