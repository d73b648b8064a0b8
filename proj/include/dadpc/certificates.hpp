#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dadpc/closed_loop.hpp"
#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/supervisor.hpp"

namespace dadpc {

/// Absolute slack for comparisons that are exact in real arithmetic.
inline constexpr double kIdentityTolerance = 1e-12;

struct CertificateResult {
  std::string name;
  bool applicable = true;
  bool passed = true;
  std::int64_t first_failure_t = -1;
  std::string detail;
};

struct CertificateReport {
  std::vector<CertificateResult> results;

  [[nodiscard]] bool all_passed() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return !r.applicable || r.passed; });
  }
  [[nodiscard]] const CertificateResult& operator[](const std::string& name) const {
    for (const auto& r : results)
      if (r.name == name) return r;
    throw Error(ErrorCode::MalformedLog, "no certificate named " + name);
  }
};

namespace detail {

inline void fail(CertificateResult& r, std::int64_t t, const std::string& why) {
  if (!r.passed) return;
  r.passed = false;
  r.first_failure_t = t;
  r.detail = why;
}

}  // namespace detail

/// Replays a step log against the guarantees of the alpha recursion.
///
/// - recursion: alpha_t = alpha_0 + eta (t alpha - sum_{i<=t} v_i) and alpha_bar = clamp(alpha_t, 0, 1);
/// - average_violation_bounds: alpha + (alpha_0 - max alpha)/(t eta) <= avg v <= alpha + (alpha_0 - min alpha)/(t eta);
/// - strict_bound: avg v <= alpha at every t, checked only when min alpha_t >= alpha_0;
/// - alpha_lower_bound: alpha_t >= -eta (1 - alpha)(delta_bar + 1), checked only when epsilon > 0;
/// - backup_intervals: every run of backup steps is shorter than 2 delta_bar, checked only when epsilon > 0;
/// - switching: backup selected exactly when y leaves Y_lim or alpha_bar = 0.
inline CertificateReport verify_certificates(const std::vector<StepRecord>& log, const RunMeta& m) {
  require(!log.empty(), ErrorCode::MalformedLog, "empty step log");
  for (std::size_t k = 0; k < log.size(); ++k) {
    require(log[k].t == log[0].t + static_cast<std::int64_t>(k), ErrorCode::MalformedLog,
            "step indices must be consecutive (row " + std::to_string(k) + ")");
    require(log[k].v == 0 || log[k].v == 1, ErrorCode::MalformedLog, "v must be 0 or 1");
  }

  CertificateResult rec{"recursion"}, lemma1{"average_violation_bounds"}, lemma2{"strict_bound"},
      thm1{"alpha_lower_bound"}, intervals{"backup_intervals"}, switching{"switching"};

  const std::int64_t t0 = log[0].t;
  if (std::abs(log[0].alpha - m.alpha_0) > kIdentityTolerance)
    detail::fail(rec, t0, "alpha at the first step differs from alpha_0");

  double a_min = m.alpha_0, a_max = m.alpha_0, a_min_all = m.alpha_0;
  for (const auto& r : log) a_min_all = std::min(a_min_all, r.alpha);
  lemma2.applicable = a_min_all >= m.alpha_0;
  if (!lemma2.applicable) lemma2.detail = "hypothesis min alpha_t >= alpha_0 does not hold";

  const bool contract = m.epsilon > 0.0;
  thm1.applicable = intervals.applicable = contract;
  const double floor = -m.eta * (1.0 - m.alpha) * static_cast<double>(m.delta_bar + 1);
  if (!contract) thm1.detail = intervals.detail = "no backup contract with epsilon > 0 declared";

  std::int64_t sum_v = 0;
  std::int64_t run = 0;
  std::int64_t longest = 0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    const StepRecord& r = log[k];
    const auto t = static_cast<std::int64_t>(k);
    if (k > 0) sum_v += r.v;
    a_min = std::min(a_min, r.alpha);
    a_max = std::max(a_max, r.alpha);

    const double expected = m.alpha_0 + m.eta * (static_cast<double>(t) * m.alpha - static_cast<double>(sum_v));
    if (std::abs(r.alpha - expected) > kIdentityTolerance * (1.0 + m.eta * static_cast<double>(t)))
      detail::fail(rec, r.t, "alpha " + csv::format(r.alpha) + " but the recursion gives " + csv::format(expected));
    if (r.alpha_bar != std::clamp(r.alpha, 0.0, 1.0))
      detail::fail(rec, r.t, "alpha_bar is not the truncation of alpha");

    if (t >= 1) {
      const double td = static_cast<double>(t);
      const double avg = static_cast<double>(sum_v) / td;
      const double lo = m.alpha + (m.alpha_0 - a_max) / (td * m.eta);
      const double hi = m.alpha + (m.alpha_0 - a_min) / (td * m.eta);
      if (avg < lo - kIdentityTolerance || avg > hi + kIdentityTolerance)
        detail::fail(lemma1, r.t,
                     "average " + csv::format(avg) + " outside [" + csv::format(lo) + ", " + csv::format(hi) + "]");
      if (lemma2.applicable && avg > m.alpha + kIdentityTolerance)
        detail::fail(lemma2, r.t, "average " + csv::format(avg) + " exceeds alpha");
    }
    if (contract && r.alpha < floor - kIdentityTolerance)
      detail::fail(thm1, r.t, "alpha " + csv::format(r.alpha) + " below " + csv::format(floor));

    const bool backup = r.policy == PolicyKind::Backup;
    run = backup ? run + 1 : 0;
    longest = std::max(longest, run);
    if (contract && run >= 2 * m.delta_bar)
      detail::fail(intervals, r.t, "backup active for " + std::to_string(run) + " consecutive steps");

    if (m.y_lim_lower.size() == r.y.size() && m.y_lim_upper.size() == r.y.size()) {
      const bool outside = (r.y.array() < m.y_lim_lower.array()).any() || (r.y.array() > m.y_lim_upper.array()).any();
      if (backup != (outside || r.alpha_bar <= 0.0))
        detail::fail(switching, r.t, backup ? "backup selected without cause" : "learned policy selected while required to back up");
    } else {
      switching.applicable = false;
      switching.detail = "operating range not given for every output";
    }
  }
  if (intervals.applicable && intervals.passed) intervals.detail = "longest run " + std::to_string(longest);
  return CertificateReport{{rec, lemma1, lemma2, thm1, intervals, switching}};
}

/// Reads a step log written with write_step_row.
inline std::vector<StepRecord> read_step_log(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::MalformedLog, "empty step log");
  const auto header = csv::split(csv::trim(line));
  require(header.size() >= 7 && header[0] == "t", ErrorCode::MalformedLog, "step log header must start with 't'");
  Index n_y = 0, n_u = 0, n_w = 0;
  for (std::size_t i = 1; i + 6 < header.size(); ++i) {
    const auto h = header[i];
    if (h.empty()) continue;
    if (h[0] == 'y') ++n_y;
    else if (h[0] == 'u') ++n_u;
    else if (h[0] == 'w') ++n_w;
  }
  const std::size_t base = 1 + static_cast<std::size_t>(n_y + n_u + n_w);
  require(header.size() == base + 6 && header[base] == "v" && header[base + 1] == "alpha" &&
              header[base + 2] == "alpha_bar" && header[base + 3] == "policy",
          ErrorCode::MalformedLog, "unexpected step log columns");

  std::vector<StepRecord> log;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = csv::trim(line);
    if (t.empty()) continue;
    const auto f = csv::split(t);
    require(f.size() == header.size(), ErrorCode::MalformedLog, "wrong field count on line " + std::to_string(lineno));
    try {
      StepRecord r;
      r.t = csv::parse_int(f[0]);
      r.y.resize(n_y);
      r.u.resize(n_u);
      r.w.resize(n_w);
      std::size_t k = 1;
      for (Index i = 0; i < n_y; ++i) r.y[i] = csv::parse_double(f[k++]);
      for (Index i = 0; i < n_u; ++i) r.u[i] = csv::parse_double(f[k++]);
      for (Index i = 0; i < n_w; ++i) r.w[i] = csv::parse_double(f[k++]);
      r.v = static_cast<int>(csv::parse_int(f[k++]));
      r.alpha = csv::parse_double(f[k++]);
      r.alpha_bar = csv::parse_double(f[k++]);
      const auto pol = csv::trim(f[k++]);
      require(pol == "dpc" || pol == "backup" || pol == "backup_fallback", ErrorCode::MalformedLog,
              "unknown policy '" + std::string(pol) + "'");
      r.policy = pol == "backup" ? PolicyKind::Backup : PolicyKind::Dpc;
      r.dpc_failed = pol == "backup_fallback";
      r.objective = csv::parse_double(f[k++]);
      r.slack_norm = csv::parse_double(f[k++]);
      log.push_back(std::move(r));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedLog) throw;
      throw Error(ErrorCode::MalformedLog, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

inline std::vector<StepRecord> load_step_log(const std::string& path) {
  auto in = csv::open_in(path);
  return read_step_log(in);
}

inline void write_step_log(std::ostream& out, const std::vector<StepRecord>& log) {
  require(!log.empty(), ErrorCode::MalformedLog, "empty step log");
  write_step_header(out, log[0].y.size(), log[0].u.size(), log[0].w.size());
  for (const auto& r : log) write_step_row(out, r);
}

inline nlohmann::json to_json(const CertificateReport& rep) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rep.results) {
    arr.push_back({{"name", r.name},
                   {"applicable", r.applicable},
                   {"passed", r.passed},
                   {"first_failure_t", r.first_failure_t},
                   {"detail", r.detail}});
  }
  return nlohmann::json{{"all_passed", rep.all_passed()}, {"certificates", arr}};
}

}  // namespace dadpc
