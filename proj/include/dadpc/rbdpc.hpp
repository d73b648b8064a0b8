#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>

#include "dadpc/conformal.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/predictor.hpp"
#include "dadpc/qpsolve.hpp"
#include "dadpc/schedule.hpp"

namespace dadpc {

/// Stage cost linear_u'u + u' diag(quad_u) u plus Q_delta |delta|^2 on the slacks.
/// linear_u and quad_u hold either n_u entries (repeated every step) or N * n_u.
struct CostSpec {
  VectorXd linear_u = VectorXd::Ones(1);
  VectorXd quad_u;
  double Q_delta = 10.0;
};

/// Input bounds; n_u entries (repeated every step) or N * n_u.
struct InputSet {
  VectorXd u_min;
  VectorXd u_max;
};

/// Row bookkeeping of an assembled OCP.
struct OcpLayout {
  Index n_u_vars = 0;
  Index n_slack = 0;
  Index comfort_rows = 0;
  Index input_rows = 0;
  Index slack_rows = 0;

  [[nodiscard]] Index n_vars() const { return n_u_vars + n_slack; }
  [[nodiscard]] Index n_ineq() const { return comfort_rows + input_rows + slack_rows; }
};

struct Ocp {
  QpProblem qp;
  OcpLayout layout;
  VectorXd y_free;  // predicted outputs at u_pred = 0
};

struct OcpResult {
  VectorXd u_first;
  VectorXd u_plan;
  VectorXd y_plan;
  VectorXd slacks;
  double objective = 0.0;
  QpStatus qp_status = QpStatus::MaxIter;
  double kkt_residual = 0.0;
  int iterations = 0;
  double solve_time = 0.0;  // seconds
  Index active_set_size = 0;
  OcpLayout layout;
};

namespace detail {

inline double per_step(const VectorXd& v, Index i, Index k, Index n_u, const char* name) {
  if (v.size() == n_u) return v[k];
  require(v.size() > i * n_u + k, ErrorCode::DimensionMismatch, std::string(name) + " must have n_u or N * n_u entries");
  return v[i * n_u + k];
}

}  // namespace detail

/// Robust DPC outer problem over x = [u_pred; delta].
///
/// Output predictions are eliminated through the affine predictor. Each
/// comfort bound at prediction step i is tightened by the conformal
/// half-width at `sigma`; sigma = 1 gives the nominal problem. The row layout
/// depends only on the schedule, never on sigma.
inline Ocp build_ocp(const AffinePredictor& p, const QuantileTable& tab, double sigma, const ComfortSchedule& sched,
                     std::int64_t t, const VectorXd& z, const VectorXd& w_pred, const CostSpec& cost,
                     const InputSet& inputs) {
  require(sigma > 0.0 && sigma <= 1.0, ErrorCode::SigmaOutOfRange,
          "sigma must lie in (0, 1]; sigma = 0 is served by the backup policy");
  require(cost.Q_delta > 0.0, ErrorCode::ConfigError, "Q_delta must be positive");
  const Index N = p.horizon, n_u = p.dims.n_u, n_y = p.dims.n_y;
  require(tab.horizon() == N && tab.n_y() == n_y, ErrorCode::DimensionMismatch,
          "quantile table does not match the predictor");
  const Index nu = N * n_u, nd = N * n_y;

  Ocp o;
  o.y_free = p.Phi_z * z + p.Phi_w * w_pred;

  // Count rows first so the matrices are allocated once.
  Index comfort = 0;
  for (Index i = 0; i < N; ++i) {
    const ComfortBand& band = sched.comfort_at(t + 1 + i);
    require(band.lb.size() == n_y, ErrorCode::DimensionMismatch, "comfort band size differs from n_y");
    for (Index j = 0; j < n_y; ++j) comfort += 1 + (std::isfinite(band.ub[j]) ? 1 : 0);
  }
  Index input = 0;
  for (Index i = 0; i < N; ++i)
    for (Index k = 0; k < n_u; ++k) {
      const double lo = detail::per_step(inputs.u_min, i, k, n_u, "u_min");
      const double hi = detail::per_step(inputs.u_max, i, k, n_u, "u_max");
      require(lo <= hi, ErrorCode::ConfigError, "u_min must not exceed u_max");
      input += (std::isfinite(lo) ? 1 : 0) + (std::isfinite(hi) ? 1 : 0);
    }
  o.layout = {nu, nd, comfort, input, nd};

  QpProblem& qp = o.qp;
  const Index n = nu + nd, m = o.layout.n_ineq();
  qp.P = MatrixXd::Zero(n, n);
  qp.q = VectorXd::Zero(n);
  qp.G = MatrixXd::Zero(m, n);
  qp.h = VectorXd::Zero(m);
  qp.A.resize(0, n);
  qp.b.resize(0);

  for (Index i = 0; i < N; ++i)
    for (Index k = 0; k < n_u; ++k) {
      qp.q[i * n_u + k] = detail::per_step(cost.linear_u, i, k, n_u, "linear_u");
      if (cost.quad_u.size()) {
        const double qd = detail::per_step(cost.quad_u, i, k, n_u, "quad_u");
        require(qd >= 0.0, ErrorCode::ConfigError, "quad_u must be nonnegative");
        qp.P(i * n_u + k, i * n_u + k) = 2.0 * qd;
      }
    }
  qp.P.bottomRightCorner(nd, nd).diagonal().setConstant(2.0 * cost.Q_delta);

  Index r = 0;
  for (Index i = 0; i < N; ++i) {
    const ComfortBand& band = sched.comfort_at(t + 1 + i);
    for (Index j = 0; j < n_y; ++j) {
      const Index row = i * n_y + j;
      const double hw = half_width(tab, i, j, sigma);
      // y_hat - hw >= lb - delta
      qp.G.row(r).head(nu) = -p.Phi_u.row(row);
      qp.G(r, nu + row) = -1.0;
      qp.h[r] = -(band.lb[j] + hw) + o.y_free[row];
      ++r;
      if (std::isfinite(band.ub[j])) {
        // y_hat + hw <= ub + delta
        qp.G.row(r).head(nu) = p.Phi_u.row(row);
        qp.G(r, nu + row) = -1.0;
        qp.h[r] = band.ub[j] - hw - o.y_free[row];
        ++r;
      }
    }
  }
  for (Index i = 0; i < N; ++i)
    for (Index k = 0; k < n_u; ++k) {
      const Index c = i * n_u + k;
      const double lo = detail::per_step(inputs.u_min, i, k, n_u, "u_min");
      const double hi = detail::per_step(inputs.u_max, i, k, n_u, "u_max");
      if (std::isfinite(hi)) {
        qp.G(r, c) = 1.0;
        qp.h[r++] = hi;
      }
      if (std::isfinite(lo)) {
        qp.G(r, c) = -1.0;
        qp.h[r++] = -lo;
      }
    }
  for (Index i = 0; i < nd; ++i) {
    qp.G(r, nu + i) = -1.0;
    qp.h[r++] = 0.0;
  }
  return o;
}

/// Solves the robust OCP and returns the receding-horizon input u*_0.
inline OcpResult policy(const AffinePredictor& p, const QuantileTable& tab, double sigma, const ComfortSchedule& sched,
                        std::int64_t t, const VectorXd& z, const VectorXd& w_pred, const CostSpec& cost,
                        const InputSet& inputs, const QpSettings& qp_cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  const Ocp o = build_ocp(p, tab, sigma, sched, t, z, w_pred, cost, inputs);
  const QpSolution sol = solve(o.qp, qp_cfg);
  const auto stop = std::chrono::steady_clock::now();

  OcpResult res;
  res.layout = o.layout;
  res.qp_status = sol.status;
  res.kkt_residual = sol.kkt_residual;
  res.iterations = sol.iterations;
  res.solve_time = std::chrono::duration<double>(stop - start).count();
  res.u_plan = sol.x.head(o.layout.n_u_vars);
  res.slacks = sol.x.tail(o.layout.n_slack);
  res.u_first = res.u_plan.head(p.dims.n_u);
  res.y_plan = o.y_free + p.Phi_u * res.u_plan;
  res.objective = sol.objective;
  const VectorXd slack = o.qp.h - o.qp.G * sol.x;
  const double tol = std::max(qp_cfg.tol_feas, 1e-6);
  for (Index i = 0; i < slack.size(); ++i)
    if (slack[i] <= tol * (1.0 + std::abs(o.qp.h[i]))) ++res.active_set_size;
  if (sol.status == QpStatus::MaxIter)
    warn("OCP solver stopped at the iteration limit at step " + std::to_string(t) + " (KKT residual " +
         csv::format(sol.kkt_residual) + "); applying best iterate");
  return res;
}

/// Diagnostic record for the run log.
inline nlohmann::json to_json(const OcpResult& r, std::int64_t t, double sigma) {
  return nlohmann::json{{"t", t},
                        {"sigma", sigma},
                        {"status", to_string(r.qp_status)},
                        {"objective", r.objective},
                        {"slack_norm", r.slacks.norm()},
                        {"slack_max", r.slacks.size() ? r.slacks.maxCoeff() : 0.0},
                        {"active_set_size", r.active_set_size},
                        {"iterations", r.iterations},
                        {"kkt_residual", r.kkt_residual},
                        {"solve_time", r.solve_time}};
}

}  // namespace dadpc
