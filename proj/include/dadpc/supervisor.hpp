#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>

#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/schedule.hpp"

namespace dadpc {

using Eigen::Index;
using Eigen::VectorXd;

enum class PolicyKind { Dpc, Backup };

constexpr const char* to_string(PolicyKind k) { return k == PolicyKind::Dpc ? "dpc" : "backup"; }

/// State of the violation-rate supervisor.
///
/// alpha_t follows alpha_t = alpha_{t-1} + eta (alpha_target - v_t) without
/// clipping; alpha_bar is its truncation to [0, 1]. Step 0 only records v_0:
/// the recursion and the violation average start at t = 1.
struct SupervisorState {
  double alpha_t = 0.0;
  double alpha_bar = 0.0;
  double alpha_target = 0.05;
  double eta = 0.5;
  double alpha_0 = 0.0;
  std::int64_t violation_count = 0;
  std::int64_t step_count = 0;  // updates applied so far (t)
  double alpha_min_seen = 0.0;
  double alpha_max_seen = 0.0;
  PolicyKind active_policy = PolicyKind::Backup;
  std::int64_t backup_run_length = 0;
  bool started = false;
};

inline SupervisorState make_supervisor(double alpha_target, double eta, double alpha_0) {
  require(alpha_target > 0.0 && alpha_target <= 1.0, ErrorCode::ConfigError, "alpha must lie in (0, 1]");
  require(eta > 0.0, ErrorCode::ConfigError, "eta must be positive");
  require(alpha_0 >= 0.0, ErrorCode::ConfigError, "alpha_0 must be nonnegative");
  SupervisorState s;
  s.alpha_target = alpha_target;
  s.eta = eta;
  s.alpha_0 = alpha_0;
  s.alpha_t = alpha_0;
  s.alpha_bar = std::clamp(alpha_0, 0.0, 1.0);
  s.alpha_min_seen = alpha_0;
  s.alpha_max_seen = alpha_0;
  return s;
}

/// Operating range whose exit forces the backup policy, plus the backup's
/// recovery constants (delta_bar steps, epsilon margin).
struct BackupContract {
  std::int64_t delta_bar = 96;
  double epsilon = 0.0;
  VectorXd y_lim_lower;
  VectorXd y_lim_upper;
};

/// 1 iff some output lies strictly outside its band; the band is closed.
inline int violation_indicator(const VectorXd& y, const VectorXd& lb, const VectorXd& ub) {
  require(y.allFinite(), ErrorCode::NonFiniteOutput, "measured output is not finite");
  require(y.size() == lb.size() && y.size() == ub.size(), ErrorCode::DimensionMismatch,
          "output and band sizes differ");
  for (Index j = 0; j < y.size(); ++j)
    if (y[j] < lb[j] || y[j] > ub[j]) return 1;
  return 0;
}

inline int violation_indicator(const VectorXd& y, const ComfortBand& band) {
  return violation_indicator(y, band.lb, band.ub);
}

inline void update_alpha(SupervisorState& s, int v) {
  s.alpha_t += s.eta * (s.alpha_target - static_cast<double>(v));
  s.alpha_bar = std::clamp(s.alpha_t, 0.0, 1.0);
  s.alpha_min_seen = std::min(s.alpha_min_seen, s.alpha_t);
  s.alpha_max_seen = std::max(s.alpha_max_seen, s.alpha_t);
  s.violation_count += v;
  ++s.step_count;
}

struct Selection {
  PolicyKind kind = PolicyKind::Backup;
  double alpha_bar = 0.0;
};

inline bool in_operating_range(const VectorXd& y, const BackupContract& c) {
  require(y.size() == c.y_lim_lower.size() && y.size() == c.y_lim_upper.size(), ErrorCode::DimensionMismatch,
          "operating range size differs from n_y");
  return (y.array() >= c.y_lim_lower.array()).all() && (y.array() <= c.y_lim_upper.array()).all();
}

/// Backup iff y leaves the operating range or alpha_bar is zero.
inline Selection select_input(SupervisorState& s, const VectorXd& y, const BackupContract& c) {
  Selection sel;
  sel.alpha_bar = s.alpha_bar;
  sel.kind = (!in_operating_range(y, c) || s.alpha_bar <= 0.0) ? PolicyKind::Backup : PolicyKind::Dpc;
  s.active_policy = sel.kind;
  s.backup_run_length = sel.kind == PolicyKind::Backup ? s.backup_run_length + 1 : 0;
  return sel;
}

/// Outcome of a learned-policy evaluation; `ok = false` requests the backup.
struct DpcOutcome {
  bool ok = false;
  VectorXd u;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double slack_norm = std::numeric_limits<double>::quiet_NaN();
  std::string incident;
};

/// Audit record of one control step.
struct StepRecord {
  std::int64_t t = 0;
  VectorXd y;
  VectorXd u;
  VectorXd w;
  int v = 0;
  double alpha = 0.0;
  double alpha_bar = 0.0;
  PolicyKind policy = PolicyKind::Backup;
  bool dpc_failed = false;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double slack_norm = std::numeric_limits<double>::quiet_NaN();
};

inline void write_step_header(std::ostream& out, Index n_y, Index n_u, Index n_w) {
  out << 't';
  for (Index i = 0; i < n_y; ++i) out << ",y" << i;
  for (Index i = 0; i < n_u; ++i) out << ",u" << i;
  for (Index i = 0; i < n_w; ++i) out << ",w" << i;
  out << ",v,alpha,alpha_bar,policy,objective,slack_norm\n";
}

inline void write_step_row(std::ostream& out, const StepRecord& r) {
  out << r.t;
  for (Index i = 0; i < r.y.size(); ++i) out << ',' << csv::format(r.y[i]);
  for (Index i = 0; i < r.u.size(); ++i) out << ',' << csv::format(r.u[i]);
  for (Index i = 0; i < r.w.size(); ++i) out << ',' << csv::format(r.w[i]);
  out << ',' << r.v << ',' << csv::format(r.alpha) << ',' << csv::format(r.alpha_bar) << ','
      << (r.dpc_failed ? "backup_fallback" : to_string(r.policy)) << ',' << csv::format(r.objective) << ','
      << csv::format(r.slack_norm) << '\n';
}

/// One supervisor step: measure v_t, update alpha (from t = 1 on), select and
/// evaluate a policy. A failed learned-policy evaluation falls back to the
/// backup for this step and is logged as an incident.
inline StepRecord step(SupervisorState& s, std::int64_t t, const VectorXd& y, const VectorXd& w,
                       const ComfortBand& band, const BackupContract& contract,
                       const std::function<DpcOutcome(double alpha_bar)>& dpc_policy,
                       const std::function<VectorXd()>& backup_policy) {
  StepRecord rec;
  rec.t = t;
  rec.y = y;
  rec.w = w;
  rec.v = violation_indicator(y, band);
  if (s.started) update_alpha(s, rec.v);
  s.started = true;
  rec.alpha = s.alpha_t;
  rec.alpha_bar = s.alpha_bar;

  const Selection sel = select_input(s, y, contract);
  rec.policy = sel.kind;
  if (sel.kind == PolicyKind::Dpc) {
    DpcOutcome out = dpc_policy(sel.alpha_bar);
    if (out.ok) {
      rec.u = std::move(out.u);
      rec.objective = out.objective;
      rec.slack_norm = out.slack_norm;
      return rec;
    }
    warn("step " + std::to_string(t) + ": learned policy failed (" + out.incident + "); backup applied");
    rec.dpc_failed = true;
  }
  rec.u = backup_policy();
  return rec;
}

}  // namespace dadpc
