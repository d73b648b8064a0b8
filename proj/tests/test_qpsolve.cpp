#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "dadpc/qpsolve.hpp"
#include "test_support.hpp"

using namespace dadpc;
using namespace dadpc::testing;

namespace {

QpProblem make(MatrixXd P, VectorXd q, MatrixXd G, VectorXd h, Index n_eq = 0) {
  const Index n = q.size();
  return QpProblem{std::move(P), std::move(q), std::move(G), std::move(h), MatrixXd(n_eq, n), VectorXd(n_eq)};
}

}  // namespace

TEST(QpSolve, ScalarLowerBound) {
  // min 1/2 x^2  s.t.  -x <= -1
  const auto p = make(MatrixXd::Identity(1, 1), VectorXd::Zero(1), MatrixXd::Constant(1, 1, -1.0),
                      VectorXd::Constant(1, -1.0));
  const auto s = solve(p);
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-6);
  EXPECT_NEAR(s.lambda_ineq[0], 1.0, 1e-6);
}

TEST(QpSolve, Unconstrained) {
  VectorXd q(2);
  q << -1, -2;
  const auto s = solve(make(MatrixXd::Identity(2, 2), q, MatrixXd(0, 2), VectorXd(0)));
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-9);
  EXPECT_NEAR(s.x[1], 2.0, 1e-9);
}

TEST(QpSolve, EqualityOnly) {
  // min 1/2 |x|^2  s.t.  x0 + x1 = 2  ->  x = (1, 1), nu = -1
  QpProblem p = make(MatrixXd::Identity(2, 2), VectorXd::Zero(2), MatrixXd(0, 2), VectorXd(0), 1);
  p.A << 1, 1;
  p.b << 2;
  const auto s = solve(p);
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-7);
  EXPECT_NEAR(s.x[1], 1.0, 1e-7);
  EXPECT_NEAR(s.nu_eq[0], -1.0, 1e-6);
}

TEST(QpSolve, InfiniteRowsAreIgnored) {
  MatrixXd G(2, 1);
  G << 1, -1;
  VectorXd h(2);
  h << std::numeric_limits<double>::infinity(), -2.0;
  const auto s = solve(make(MatrixXd::Identity(1, 1), VectorXd::Zero(1), G, h));
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.x[0], 2.0, 1e-6);
  EXPECT_EQ(s.lambda_ineq[0], 0.0);
}

TEST(QpSolve, MatchesActiveSetOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = 1 + trial % 6, m = trial % 9, me = trial % 3 == 0 ? std::min<Index>(1, n - 1) : 0;
    const QpProblem p = random_qp(rng, n, m, me);
    const auto oracle = active_set_oracle(p);
    ASSERT_TRUE(oracle.feasible) << "trial " << trial;
    const auto s = solve(p);
    ASSERT_EQ(s.status, QpStatus::Optimal) << "trial " << trial;
    EXPECT_LE((s.x - oracle.x).lpNorm<Eigen::Infinity>(), 1e-5) << "trial " << trial;
    EXPECT_LE(s.kkt_residual, 1e-6) << "trial " << trial;
  }
}

TEST(QpSolve, IndependentKktCheckOnOptimalSolutions) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 40; ++trial) {
    const QpProblem p = random_qp(rng, 8, 12, 2);
    const auto s = solve(p);
    ASSERT_EQ(s.status, QpStatus::Optimal);
    const auto rep = kkt_report(p, s.x, s.lambda_ineq, s.nu_eq);
    EXPECT_LE(rep.stationarity, 1e-6);
    EXPECT_LE(rep.complementarity, 1e-6);
    EXPECT_LE(rep.primal_ineq, 1e-7);
    EXPECT_LE(rep.primal_eq, 1e-7);
    EXPECT_LE(rep.dual, 1e-7);
  }
}

TEST(QpSolve, NoRandomFeasiblePointIsBetter) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const QpProblem p = random_qp(rng, 4, 6, 0);
    const auto s = solve(p);
    ASSERT_EQ(s.status, QpStatus::Optimal);
    const double f = p.objective(s.x);
    int found = 0;
    for (int k = 0; k < 200000 && found < 1000; ++k) {
      const VectorXd x = s.x + gaussian_matrix(rng, 4, 1, 0.5);
      if (((p.G * x - p.h).array() > 0.0).any()) continue;
      ++found;
      EXPECT_GE(p.objective(x), f - 1e-7 * (1.0 + std::abs(f)));
    }
    EXPECT_GT(found, 0);
  }
}

TEST(QpSolve, Deterministic) {
  std::mt19937_64 rng(24);
  const QpProblem p = random_qp(rng, 10, 20, 3);
  const auto a = solve(p), b = solve(p);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.lambda_ineq, b.lambda_ineq);
}

TEST(QpSolve, DetectsInfeasibleBounds) {
  // x <= -1 and x >= 1
  MatrixXd G(2, 1);
  G << 1, -1;
  VectorXd h(2);
  h << -1, -1;
  const auto s = solve(make(MatrixXd::Identity(1, 1), VectorXd::Zero(1), G, h));
  EXPECT_EQ(s.status, QpStatus::Infeasible);
}

TEST(QpSolve, DetectsInfeasibleGeneralRows) {
  // x0 + x1 <= 0 and x0 + x1 >= 1
  MatrixXd G(2, 2);
  G << 1, 1, -1, -1;
  VectorXd h(2);
  h << 0, -1;
  const auto s = solve(make(MatrixXd::Identity(2, 2), VectorXd::Zero(2), G, h));
  EXPECT_EQ(s.status, QpStatus::Infeasible);
}

TEST(QpSolve, IterationCapReportsMaxIter) {
  std::mt19937_64 rng(25);
  const QpProblem p = random_qp(rng, 6, 10, 0);
  QpSettings cfg;
  cfg.max_iter = 2;
  EXPECT_EQ(solve(p, cfg).status, QpStatus::MaxIter);
}

TEST(QpSolve, RejectsNonSymmetricP) {
  MatrixXd P(2, 2);
  P << 1, 0.5, 0, 1;
  const auto p = make(P, VectorXd::Zero(2), MatrixXd(0, 2), VectorXd(0));
  EXPECT_EQ(error_code_of([&] { (void)solve(p); }), ErrorCode::NonSymmetricP);
}

TEST(QpSolve, RejectsDimensionMismatch) {
  const auto p = make(MatrixXd::Identity(2, 2), VectorXd::Zero(2), MatrixXd::Zero(1, 3), VectorXd::Zero(1));
  EXPECT_EQ(error_code_of([&] { (void)solve(p); }), ErrorCode::DimensionMismatch);
}

TEST(QpSolve, PositiveSemidefiniteLinearProgram) {
  // P = 0: min -x0 - x1 over the box [0, 1]^2 with x0 + x1 <= 1.5
  MatrixXd G(5, 2);
  G << 1, 0, 0, 1, -1, 0, 0, -1, 1, 1;
  VectorXd h(5);
  h << 1, 1, 0, 0, 1.5;
  VectorXd q(2);
  q << -1, -1;
  const auto s = solve(make(MatrixXd::Zero(2, 2), q, G, h));
  ASSERT_EQ(s.status, QpStatus::Optimal);
  EXPECT_NEAR(s.objective, -1.5, 1e-6);
}
