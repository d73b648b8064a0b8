#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dadpc/errors.hpp"

namespace dadpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Dense convex QP:  min 1/2 x'Px + q'x  s.t.  Gx <= h,  Ax = b.
struct QpProblem {
  MatrixXd P;
  VectorXd q;
  MatrixXd G;
  VectorXd h;
  MatrixXd A;
  VectorXd b;

  [[nodiscard]] Index num_vars() const { return q.size(); }
  [[nodiscard]] Index num_ineq() const { return h.size(); }
  [[nodiscard]] Index num_eq() const { return b.size(); }

  [[nodiscard]] double objective(const VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

constexpr const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

struct QpSettings {
  double tol_kkt = 1e-9;
  double tol_feas = 1e-9;
  int max_iter = 20000;
};

struct QpSolution {
  VectorXd x;
  VectorXd lambda_ineq;
  VectorXd nu_eq;
  QpStatus status = QpStatus::MaxIter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double objective = 0.0;
  int iterations = 0;
};

/// Scaled first-order optimality measures of a primal-dual point.
struct KktReport {
  double stationarity = 0.0;     // |Px + q + G'l + A'v|_inf / (1 + |q|_inf)
  double complementarity = 0.0;  // max_i |l_i (h - Gx)_i| / (1 + |f(x)|)
  double primal_ineq = 0.0;      // max_i (Gx - h)_i^+, absolute
  double primal_eq = 0.0;        // |Ax - b|_inf, absolute
  double dual = 0.0;             // max_i (-l_i)^+, absolute

  [[nodiscard]] double residual(double h_scale) const {
    return std::max({stationarity, complementarity, std::max(primal_ineq, primal_eq) / (1.0 + h_scale), dual});
  }
};

inline KktReport kkt_report(const QpProblem& p, const VectorXd& x, const VectorXd& lam, const VectorXd& nu) {
  KktReport r;
  VectorXd grad = p.P * x + p.q;
  if (p.num_ineq() > 0) grad.noalias() += p.G.transpose() * lam;
  if (p.num_eq() > 0) grad.noalias() += p.A.transpose() * nu;
  const double qn = p.q.size() ? p.q.lpNorm<Eigen::Infinity>() : 0.0;
  r.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() / (1.0 + qn) : 0.0;
  const double f = std::abs(p.objective(x));
  if (p.num_ineq() > 0) {
    const VectorXd slack = p.h - p.G * x;
    r.complementarity = (lam.array() * slack.array()).abs().maxCoeff() / (1.0 + f);
    r.primal_ineq = std::max(0.0, (-slack).maxCoeff());
    r.dual = std::max(0.0, (-lam).maxCoeff());
  }
  if (p.num_eq() > 0) r.primal_eq = (p.A * x - p.b).lpNorm<Eigen::Infinity>();
  return r;
}

inline void validate(const QpProblem& p) {
  const Index n = p.q.size();
  require(p.P.rows() == n && p.P.cols() == n, ErrorCode::DimensionMismatch, "P must be n x n");
  require(p.G.rows() == p.h.size() && (p.h.size() == 0 || p.G.cols() == n), ErrorCode::DimensionMismatch,
          "G must be m x n with h of length m");
  require(p.A.rows() == p.b.size() && (p.b.size() == 0 || p.A.cols() == n), ErrorCode::DimensionMismatch,
          "A must be p x n with b of length p");
  const double scale = std::max(1.0, p.P.size() ? p.P.cwiseAbs().maxCoeff() : 0.0);
  require(n == 0 || (p.P - p.P.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorCode::NonSymmetricP,
          "P is not symmetric");
  require(p.P.allFinite() && p.q.allFinite() && p.G.allFinite() && p.A.allFinite() && p.b.allFinite() &&
              !p.h.hasNaN(),
          ErrorCode::DimensionMismatch, "QP data must be finite");
}

namespace detail {

// Rows of G with a single nonzero only touch one diagonal entry of the Newton
// matrix; they are split out so the dense update scales with the general rows.
struct RowSplit {
  std::vector<Index> dense_rows;
  std::vector<Index> bound_rows;
  std::vector<Index> bound_col;
  std::vector<double> bound_coef;
  MatrixXd G_dense;
};

inline RowSplit split_rows(const MatrixXd& G) {
  RowSplit s;
  for (Index r = 0; r < G.rows(); ++r) {
    Index nnz = 0, col = -1;
    for (Index c = 0; c < G.cols(); ++c)
      if (G(r, c) != 0.0) {
        ++nnz;
        col = c;
      }
    if (nnz == 1) {
      s.bound_rows.push_back(r);
      s.bound_col.push_back(col);
      s.bound_coef.push_back(G(r, col));
    } else {
      s.dense_rows.push_back(r);
    }
  }
  s.G_dense.resize(static_cast<Index>(s.dense_rows.size()), G.cols());
  for (std::size_t i = 0; i < s.dense_rows.size(); ++i) s.G_dense.row(static_cast<Index>(i)) = G.row(s.dense_rows[i]);
  return s;
}

inline double max_step(const VectorXd& v, const VectorXd& dv) {
  double a = 1.0;
  for (Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace detail

/// Primal-dual interior-point method with Mehrotra predictor-corrector steps.
///
/// Each iteration factors the reduced Newton matrix P + G' W G (Cholesky) and,
/// when equality constraints exist, the Schur complement A H^-1 A'. Iteration
/// order is fixed and no randomness is used, so repeated solves of the same
/// problem are bit-identical.
inline QpSolution solve(const QpProblem& prob, const QpSettings& cfg = {}) {
  validate(prob);
  const Index n = prob.num_vars();
  const Index m = prob.num_ineq();
  const Index p = prob.num_eq();

  // Rows with h = +inf never bind.
  std::vector<Index> live;
  for (Index i = 0; i < m; ++i) {
    require(prob.h[i] != -std::numeric_limits<double>::infinity(), ErrorCode::DimensionMismatch,
            "inequality with h = -inf is infeasible by construction");
    if (std::isfinite(prob.h[i])) live.push_back(i);
  }
  const Index ml = static_cast<Index>(live.size());
  MatrixXd G(ml, n);
  VectorXd h(ml);
  for (Index i = 0; i < ml; ++i) {
    G.row(i) = prob.G.row(live[i]);
    h[i] = prob.h[live[i]];
  }

  const detail::RowSplit split = detail::split_rows(G);
  const Index md = static_cast<Index>(split.dense_rows.size());
  VectorXd h_dense(md);
  for (Index i = 0; i < md; ++i) h_dense[i] = h[split.dense_rows[i]];

  const double q_norm = n ? prob.q.lpNorm<Eigen::Infinity>() : 0.0;
  const double h_scale = std::max(ml ? h.lpNorm<Eigen::Infinity>() : 0.0, p ? prob.b.lpNorm<Eigen::Infinity>() : 0.0);
  const double dual_scale = std::max({1.0, q_norm, prob.P.size() ? prob.P.lpNorm<Eigen::Infinity>() : 0.0});

  VectorXd x = VectorXd::Zero(n);
  VectorXd y = VectorXd::Zero(p);
  VectorXd s(ml), z(ml);
  {
    const VectorXd r0 = h - G * x;
    for (Index i = 0; i < ml; ++i) s[i] = std::max(1.0, r0[i]);
    z.setOnes();
  }

  QpSolution sol;
  auto finish = [&](QpStatus st, int iters) {
    sol.x = x;
    sol.lambda_ineq = VectorXd::Zero(m);
    for (Index i = 0; i < ml; ++i) sol.lambda_ineq[live[i]] = z[i];
    sol.nu_eq = y;
    sol.status = st;
    sol.iterations = iters;
    sol.objective = prob.objective(x);
    const KktReport rep = kkt_report(prob, x, sol.lambda_ineq, y);
    sol.kkt_residual = rep.residual(h_scale);
    if (st == QpStatus::Optimal &&
        (rep.primal_ineq > cfg.tol_feas || rep.primal_eq > cfg.tol_feas || rep.dual > cfg.tol_feas))
      sol.status = QpStatus::MaxIter;
    return sol;
  };

  Eigen::LLT<MatrixXd> llt;
  Eigen::LLT<MatrixXd> schur;
  MatrixXd H(n, n), HinvAt;
  VectorXd w(ml);

  // Solves the Newton system for a given complementarity residual rc.
  auto newton = [&](const VectorXd& rd, const VectorXd& rp, const VectorXd& re, const VectorXd& rc, VectorXd& dx,
                    VectorXd& dy, VectorXd& ds, VectorXd& dz) {
    const VectorXd tmp = (w.array() * rp.array() - rc.array() / s.array()).matrix();
    VectorXd rhs = -rd;
    if (ml) rhs.noalias() -= G.transpose() * tmp;
    if (p) {
      const VectorXd Hr = llt.solve(rhs);
      dy = schur.solve(prob.A * Hr + re);
      dx = Hr - HinvAt * dy;
    } else {
      dx = llt.solve(rhs);
    }
    ds = -rp - G * dx;
    dz = (w.array() * (rp + G * dx).array() - rc.array() / s.array()).matrix();
  };

  double best_res = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const int iter_cap = std::max(1, cfg.max_iter);
  for (int it = 0; it < iter_cap; ++it) {
    VectorXd rd = prob.P * x + prob.q;
    if (ml) rd.noalias() += G.transpose() * z;
    if (p) rd.noalias() += prob.A.transpose() * y;
    const VectorXd rp = ml ? VectorXd(G * x + s - h) : VectorXd();
    const VectorXd re = p ? VectorXd(prob.A * x - prob.b) : VectorXd();
    const double mu = ml ? s.dot(z) / static_cast<double>(ml) : 0.0;

    // Convergence on the true (unlifted) residuals.
    {
      VectorXd lam_full = VectorXd::Zero(m);
      for (Index i = 0; i < ml; ++i) lam_full[live[i]] = z[i];
      const KktReport rep = kkt_report(prob, x, lam_full, y);
      const double res = rep.residual(h_scale);
      const double gap = ml ? mu / (1.0 + std::abs(prob.objective(x))) : 0.0;
      if (res <= cfg.tol_kkt && gap <= cfg.tol_kkt && rep.primal_ineq <= cfg.tol_feas &&
          rep.primal_eq <= cfg.tol_feas)
        return finish(QpStatus::Optimal, it);
      if (res < 0.5 * best_res) {
        best_res = res;
        since_best = 0;
      } else if (++since_best > 60) {
        return finish(QpStatus::MaxIter, it);
      }
    }

    // Farkas certificate: z >= 0, G'z + A'y = 0, h'z + b'y < 0.
    if (ml) {
      const double zn = z.lpNorm<Eigen::Infinity>();
      if (zn > 1e8 * dual_scale) {
        VectorXd c = G.transpose() * z;
        if (p) c.noalias() += prob.A.transpose() * y;
        const double gap = h.dot(z) + (p ? prob.b.dot(y) : 0.0);
        if (c.lpNorm<Eigen::Infinity>() <= 1e-6 * zn && gap < -1e-8 * zn) return finish(QpStatus::Infeasible, it);
      }
    }

    // Newton matrix H = P + G' W G with W = z / s.
    w = (z.array() / s.array()).matrix();
    H = prob.P;
    if (md) {
      VectorXd wd(md);
      for (Index i = 0; i < md; ++i) wd[i] = w[split.dense_rows[i]];
      const MatrixXd WG = wd.asDiagonal() * split.G_dense;
      H.noalias() += split.G_dense.transpose() * WG;
    }
    for (std::size_t k = 0; k < split.bound_rows.size(); ++k) {
      const double a = split.bound_coef[k];
      H(split.bound_col[k], split.bound_col[k]) += w[split.bound_rows[k]] * a * a;
    }
    llt.compute(H);
    double reg = 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
    while (llt.info() != Eigen::Success && reg < 1e6) {
      MatrixXd Hr = H;
      Hr.diagonal().array() += reg;
      llt.compute(Hr);
      reg *= 100.0;
    }
    if (llt.info() != Eigen::Success) return finish(QpStatus::MaxIter, it);
    if (p) {
      HinvAt = llt.solve(prob.A.transpose());
      MatrixXd S = prob.A * HinvAt;
      schur.compute(S);
      if (schur.info() != Eigen::Success) {
        S.diagonal().array() += 1e-12 * (1.0 + S.diagonal().cwiseAbs().maxCoeff());
        schur.compute(S);
        if (schur.info() != Eigen::Success) return finish(QpStatus::MaxIter, it);
      }
    }

    VectorXd dx, dy, ds, dz;
    if (!ml) {
      newton(rd, rp, re, VectorXd(), dx, dy, ds, dz);
      x += dx;
      if (p) y += dy;
      continue;
    }

    // Predictor (affine scaling) step.
    const VectorXd rc_aff = (s.array() * z.array()).matrix();
    newton(rd, rp, re, rc_aff, dx, dy, ds, dz);
    const double a_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
    const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(ml);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector step.
    const VectorXd rc = (s.array() * z.array() + ds.array() * dz.array() - sigma * mu).matrix();
    newton(rd, rp, re, rc, dx, dy, ds, dz);
    const double a = std::min(1.0, 0.99 * std::min(detail::max_step(s, ds), detail::max_step(z, dz)));

    x += a * dx;
    s += a * ds;
    z += a * dz;
    if (p) y += a * dy;
    // Keep strictly interior.
    s = s.cwiseMax(1e-300);
    z = z.cwiseMax(1e-300);
  }
  return finish(QpStatus::MaxIter, iter_cap);
}

}  // namespace dadpc
