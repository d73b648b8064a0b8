#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>
#include <vector>

#include "dadpc/closed_loop.hpp"
#include "dadpc/csv.hpp"

namespace dadpc {

/// Runs job(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// One (alpha, seed) cell of a sweep.
struct SweepRow {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  KpiReport kpi;
  double final_average_violation = 0.0;
  bool lemma1_upper_ok = true;
  double wall_seconds = 0.0;
};

struct SweepOptions {
  std::vector<std::uint64_t> seeds;  // empty: the config's seed
  unsigned workers = 0;
  bool with_baseline = true;
  std::function<void(const RunResult&, double alpha, std::uint64_t seed)> on_run;
};

/// Closed-loop runs for every (alpha, seed) pair. Each seed's baseline is run
/// once and shared across alphas. Rows come back ordered by (alpha, seed).
inline std::vector<SweepRow> sweep_alpha(const ScenarioConfig& base, const std::vector<double>& alphas,
                                         const SweepOptions& opt = {}) {
  require(!alphas.empty(), ErrorCode::ConfigError, "at least one alpha is required");
  const std::vector<std::uint64_t> seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{base.run.seed} : opt.seeds;

  std::vector<double> baseline_energy(seeds.size(), 0.0);
  if (opt.with_baseline) {
    parallel_for(seeds.size(), opt.workers, [&](std::size_t s) {
      ScenarioConfig cfg = base;
      cfg.run.seed = seeds[s];
      baseline_energy[s] = run_closed_loop(cfg, {.baseline_only = true}).kpi.energy_kwh;
    });
  }

  std::vector<SweepRow> rows(alphas.size() * seeds.size());
  std::mutex cb_mu;
  parallel_for(rows.size(), opt.workers, [&](std::size_t k) {
    const std::size_t a = k / seeds.size(), s = k % seeds.size();
    ScenarioConfig cfg = base;
    cfg.controller.alpha = alphas[a];
    cfg.backup.contract.epsilon = std::min(cfg.backup.contract.epsilon, alphas[a]);
    cfg.run.seed = seeds[s];
    const auto start = std::chrono::steady_clock::now();
    RunResult r = run_closed_loop(cfg);
    SweepRow& row = rows[k];
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.alpha = alphas[a];
    row.seed = seeds[s];
    row.kpi = r.kpi;
    if (opt.with_baseline && baseline_energy[s] > 0.0)
      row.kpi.relative_energy_pct = 100.0 * r.kpi.energy_kwh / baseline_energy[s];
    row.final_average_violation = r.kpi.violation_ratio;
    // Upper half of the average-violation chain, pointwise.
    double a_min = cfg.controller.alpha_0;
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < r.log.size(); ++i) {
      a_min = std::min(a_min, r.log[i].alpha);
      if (i == 0) continue;
      sum += r.log[i].v;
      const double td = static_cast<double>(i);
      const double hi = cfg.controller.alpha + (cfg.controller.alpha_0 - a_min) / (td * cfg.controller.eta);
      if (static_cast<double>(sum) / td > hi + 1e-12) row.lemma1_upper_ok = false;
    }
    if (opt.on_run) {
      std::lock_guard lock(cb_mu);
      opt.on_run(r, alphas[a], seeds[s]);
    }
  });
  return rows;
}

/// Mean and sample standard deviation.
struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

inline Stat stat(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::InsufficientData, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AlphaSummary {
  double alpha = 0.0;
  Stat violation_ratio;
  Stat violation_magnitude_kh;
  Stat energy_kwh;
  Stat relative_energy_pct;
  double median_final_violation = 0.0;
  std::size_t runs = 0;
};

inline std::vector<AlphaSummary> summarize(const std::vector<SweepRow>& rows) {
  std::map<double, std::vector<const SweepRow*>> by_alpha;
  for (const auto& r : rows) by_alpha[r.alpha].push_back(&r);
  std::vector<AlphaSummary> out;
  for (const auto& [alpha, group] : by_alpha) {
    std::vector<double> vr, vm, en, re;
    for (const SweepRow* r : group) {
      vr.push_back(r->kpi.violation_ratio);
      vm.push_back(r->kpi.violation_magnitude_kh);
      en.push_back(r->kpi.energy_kwh);
      if (r->kpi.relative_energy_pct) re.push_back(*r->kpi.relative_energy_pct);
    }
    AlphaSummary s;
    s.alpha = alpha;
    s.violation_ratio = stat(vr);
    s.violation_magnitude_kh = stat(vm);
    s.energy_kwh = stat(en);
    s.relative_energy_pct = stat(re);
    s.median_final_violation = median(vr);
    s.runs = group.size();
    out.push_back(s);
  }
  return out;
}

/// Per-run table; contains no timing so identical inputs give identical bytes.
inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "alpha,seed,violation_ratio,violation_magnitude_kh,energy_kwh,relative_energy_pct,backup_steps,dpc_steps\n";
  for (const auto& r : rows) {
    out << csv::format(r.alpha) << ',' << r.seed << ',' << csv::format(r.kpi.violation_ratio) << ','
        << csv::format(r.kpi.violation_magnitude_kh) << ',' << csv::format(r.kpi.energy_kwh) << ','
        << (r.kpi.relative_energy_pct ? csv::format(*r.kpi.relative_energy_pct) : std::string("nan")) << ','
        << r.kpi.backup_activation_steps << ',' << r.kpi.dpc_steps << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::vector<AlphaSummary>& rows) {
  out << "alpha,runs,violation_ratio_mean,violation_ratio_std,violation_magnitude_kh_mean,"
         "violation_magnitude_kh_std,energy_kwh_mean,energy_kwh_std,relative_energy_pct_mean,"
         "relative_energy_pct_std,median_violation_ratio\n";
  for (const auto& s : rows) {
    out << csv::format(s.alpha) << ',' << s.runs << ',' << csv::format(s.violation_ratio.mean) << ','
        << csv::format(s.violation_ratio.std) << ',' << csv::format(s.violation_magnitude_kh.mean) << ','
        << csv::format(s.violation_magnitude_kh.std) << ',' << csv::format(s.energy_kwh.mean) << ','
        << csv::format(s.energy_kwh.std) << ',' << csv::format(s.relative_energy_pct.mean) << ','
        << csv::format(s.relative_energy_pct.std) << ',' << csv::format(s.median_final_violation) << '\n';
  }
}

/// Independent noise seeds base.run.seed, base.run.seed + 1, ...; weather stays fixed.
inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = first + i;
  return s;
}

inline AlphaSummary monte_carlo(const ScenarioConfig& cfg, std::size_t n_seeds, unsigned workers = 0,
                                std::vector<SweepRow>* rows_out = nullptr) {
  require(n_seeds >= 1, ErrorCode::ConfigError, "at least one seed is required");
  SweepOptions opt;
  opt.seeds = seed_range(cfg.run.seed, n_seeds);
  opt.workers = workers;
  opt.with_baseline = cfg.run.baseline;
  auto rows = sweep_alpha(cfg, {cfg.controller.alpha}, opt);
  auto s = summarize(rows).front();
  if (rows_out) *rows_out = std::move(rows);
  return s;
}

}  // namespace dadpc
