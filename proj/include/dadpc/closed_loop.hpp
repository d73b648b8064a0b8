#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dadpc/config.hpp"
#include "dadpc/conformal.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/plant.hpp"
#include "dadpc/predictor.hpp"
#include "dadpc/rbdpc.hpp"
#include "dadpc/supervisor.hpp"
#include "dadpc/trajdata.hpp"

namespace dadpc {

struct KpiReport {
  double violation_ratio = 0.0;
  double violation_magnitude_kh = 0.0;
  double energy_kwh = 0.0;
  std::optional<double> relative_energy_pct;
  std::int64_t backup_activation_steps = 0;
  std::int64_t dpc_steps = 0;
  std::int64_t dpc_fallbacks = 0;
  std::int64_t counted_steps = 0;
  double mean_solve_time = 0.0;  // seconds, over learned-policy steps
};

/// Parameters a certificate check needs alongside the step log.
struct RunMeta {
  double alpha = 0.05;
  double alpha_0 = 0.0;
  double eta = 0.5;
  std::int64_t delta_bar = 96;
  double epsilon = 0.0;
  VectorXd y_lim_lower;
  VectorXd y_lim_upper;
  double dt_minutes = 15.0;
  std::uint64_t seed = 0;
};

/// Robust and nominal solve times on the same state.
struct TimingPair {
  std::int64_t t = 0;
  double sigma = 1.0;
  double robust = 0.0;
  double nominal = 0.0;
};

struct RunOptions {
  bool baseline_only = false;
  bool keep_trajectory = false;
  bool keep_diagnostics = false;
  bool pair_nominal_timing = false;
};

struct RunResult {
  std::vector<StepRecord> log;
  std::vector<ComfortBand> bands;  // comfort band at each logged step
  KpiReport kpi;
  RunMeta meta;
  std::vector<nlohmann::json> diagnostics;
  std::vector<TimingPair> timing;
  std::optional<TrajectoryStore> trajectory;
  std::optional<AffinePredictor> initial_predictor;
  std::optional<QuantileTable> initial_table;
  std::int64_t rebuilds = 0;
  std::int64_t rebuild_failures = 0;
  std::int64_t offset = 0;  // global step index of online step 0
};

inline RunMeta make_meta(const ScenarioConfig& cfg) {
  RunMeta m;
  m.alpha = cfg.controller.alpha;
  m.alpha_0 = cfg.controller.alpha_0;
  m.eta = cfg.controller.eta;
  m.delta_bar = cfg.backup.contract.delta_bar;
  m.epsilon = cfg.backup.contract.epsilon;
  m.y_lim_lower = cfg.backup.contract.y_lim_lower;
  m.y_lim_upper = cfg.backup.contract.y_lim_upper;
  m.dt_minutes = cfg.plant.dt_minutes;
  m.seed = cfg.run.seed;
  return m;
}

/// Comfort exceedance of one measurement in Kelvin-hours.
inline double exceedance_kh(const VectorXd& y, const ComfortBand& band, double dt_minutes) {
  double e = 0.0;
  for (Index j = 0; j < y.size(); ++j) e += std::max({band.lb[j] - y[j], y[j] - band.ub[j], 0.0});
  return e * dt_minutes / 60.0;
}

/// KPIs of a step log. Violations count from t = 1; energy covers every step.
inline KpiReport compute_kpis(const std::vector<StepRecord>& log, const std::vector<ComfortBand>& bands,
                              double dt_minutes) {
  require(log.size() == bands.size(), ErrorCode::MalformedLog, "one comfort band per logged step is required");
  KpiReport k;
  std::int64_t violations = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const StepRecord& r = log[i];
    k.energy_kwh += r.u.sum() * dt_minutes / 60.0;
    if (r.policy == PolicyKind::Backup) ++k.backup_activation_steps;
    if (r.policy == PolicyKind::Dpc && !r.dpc_failed) ++k.dpc_steps;
    if (r.dpc_failed) ++k.dpc_fallbacks;
    if (i == 0) continue;
    ++k.counted_steps;
    violations += r.v;
    k.violation_magnitude_kh += exceedance_kh(r.y, bands[i], dt_minutes);
  }
  k.violation_ratio = k.counted_steps ? static_cast<double>(violations) / static_cast<double>(k.counted_steps) : 0.0;
  return k;
}

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t which) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(which)};
  return std::mt19937_64(seq);
}

inline WeatherSource make_weather(const ScenarioConfig& cfg) {
  auto fseed = stream(cfg.run.seed, 2)();
  if (cfg.weather.from_csv)
    return WeatherSource::from_csv(cfg.weather.csv_path, cfg.plant.dt_minutes, fseed, cfg.weather.forecast_noise_std);
  return WeatherSource(cfg.weather.synthetic, cfg.plant.dt_minutes, cfg.weather.seed, fseed,
                       cfg.weather.forecast_noise_std);
}

}  // namespace detail

/// Offline collection, predictor and calibration, then the supervised online
/// loop. With `baseline_only` the online loop applies the backup throughout.
/// Both variants consume the noise streams identically, so a baseline and a
/// controlled run with the same seed see the same disturbances.
inline RunResult run_closed_loop(const ScenarioConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const auto& cc = cfg.controller;
  const RcModel& plant = cfg.plant;
  const Dims dims{plant.n_u(), plant.n_y(), plant.n_w()};
  const double dt = plant.dt_minutes;
  const Index N = cc.N, t_init = cc.t_init;

  auto noise_rng = detail::stream(cfg.run.seed, 0);
  auto excite_rng = detail::stream(cfg.run.seed, 1);
  WeatherSource weather = detail::make_weather(cfg);

  RunResult res;
  res.meta = make_meta(cfg);
  if (opt.keep_trajectory) res.trajectory.emplace(dims);

  const std::size_t collect = cc.T + cc.T_c;
  res.offset = static_cast<std::int64_t>(collect);
  TrajectoryStore window(dims, cc.T);
  TrajectoryStore calib(dims);
  TrajectoryStore hankel_data(dims);

  VectorXd x = plant.x0;
  VectorXd y = plant.C * x;
  if (plant.meas_noise_std > 0.0) y += gaussian(plant.n_y(), plant.meas_noise_std, noise_rng);
  BackupPolicy backup(cfg.backup.setpoint, cfg.backup.deadband, cfg.backup.mode, cfg.u_min, cfg.u_max);

  auto record = [&](std::int64_t g, const VectorXd& u, const VectorXd& y_next, const VectorXd& w) {
    Record r{g, 0, u, y_next, w};
    if (res.trajectory) res.trajectory->append(r);
    window.append(r);
    return r;
  };

  // Offline data collection under the excited backup.
  std::uniform_real_distribution<double> jitter(-cfg.collection.setpoint_jitter, cfg.collection.setpoint_jitter);
  std::uniform_real_distribution<double> power(cfg.collection.power_fraction_min, 1.0);
  for (std::size_t k = 0; k < collect; ++k) {
    const auto g = static_cast<std::int64_t>(k);
    if (g % cfg.collection.jitter_period == 0) backup.set_setpoint(cfg.backup.setpoint + jitter(excite_rng));
    VectorXd u = backup(y);
    const double frac = power(excite_rng);
    if (backup.on()) u = cfg.u_min + frac * (cfg.u_max - cfg.u_min);
    const VectorXd w = weather.horizon(g, N).first;
    auto [x_next, y_next] = simulate_step(plant, x, u, w, noise_rng);
    Record r = record(g, u, y_next, w);
    (k < cc.T ? hankel_data : calib).append(std::move(r));
    x = std::move(x_next);
    y = std::move(y_next);
  }
  backup.set_setpoint(cfg.backup.setpoint);

  std::optional<AffinePredictor> predictor;
  std::optional<QuantileTable> table;
  if (!opt.baseline_only) {
    predictor = assemble(build_mosaic(hankel_data, t_init, N), cc.Q_g);
    table = calibrate(calib, *predictor, cc.window_cap);
    res.initial_predictor = predictor;
    res.initial_table = table;
  }

  SupervisorState sup = make_supervisor(cc.alpha, cc.eta, cc.alpha_0);
  const CostSpec cost{cc.linear_u, cc.quad_u, cc.Q_delta};
  const InputSet inputs{cfg.u_min, cfg.u_max};
  double solve_time_sum = 0.0;
  std::int64_t solves = 0;

  res.log.reserve(static_cast<std::size_t>(cfg.run.horizon_steps));
  res.bands.reserve(static_cast<std::size_t>(cfg.run.horizon_steps));
  for (std::int64_t t = 0; t < cfg.run.horizon_steps; ++t) {
    const std::int64_t g = res.offset + t;
    try {
      if (predictor && cc.rebuild_period > 0 && t > 0 && t % cc.rebuild_period == 0) {
        try {
          predictor = assemble(build_mosaic(window, t_init, N), cc.Q_g);
          ++res.rebuilds;
        } catch (const Error& e) {
          ++res.rebuild_failures;
          warn("step " + std::to_string(t) + ": predictor rebuild failed, keeping the previous one (" + e.what() + ")");
        }
      }
      const ComfortBand& band = cfg.schedule.comfort_at(g);
      auto [w, w_pred] = weather.horizon(g, N);
      backup.observe(y);

      StepRecord rec;
      if (opt.baseline_only) {
        rec.t = t;
        rec.y = y;
        rec.w = w;
        rec.v = violation_indicator(y, band);
        rec.alpha = sup.alpha_t;
        rec.alpha_bar = sup.alpha_bar;
        rec.policy = PolicyKind::Backup;
        rec.u = backup.output();
      } else {
        const VectorXd z = make_z(window, window.size(), t_init);
        auto dpc = [&](double alpha_bar) {
          DpcOutcome out;
          const OcpResult r = policy(*predictor, *table, alpha_bar, cfg.schedule, g, z, w_pred, cost, inputs, cc.qp);
          solve_time_sum += r.solve_time;
          ++solves;
          if (opt.pair_nominal_timing) {
            const OcpResult nom = policy(*predictor, *table, 1.0, cfg.schedule, g, z, w_pred, cost, inputs, cc.qp);
            // Re-time the robust problem after the nominal one so neither
            // benefits systematically from a warm cache.
            const OcpResult rob = policy(*predictor, *table, alpha_bar, cfg.schedule, g, z, w_pred, cost, inputs, cc.qp);
            res.timing.push_back({t, alpha_bar, 0.5 * (r.solve_time + rob.solve_time), nom.solve_time});
          }
          if (opt.keep_diagnostics) res.diagnostics.push_back(to_json(r, t, alpha_bar));
          if (r.qp_status == QpStatus::Infeasible) {
            out.incident = "OCP reported infeasible";
            return out;
          }
          out.ok = true;
          out.u = r.u_first.cwiseMax(cfg.u_min).cwiseMin(cfg.u_max);
          out.objective = r.objective;
          out.slack_norm = r.slacks.norm();
          return out;
        };
        rec = step(sup, t, y, w, band, cfg.backup.contract, dpc, [&] { return backup.output(); });
      }

      auto [x_next, y_next] = simulate_step(plant, x, rec.u, w, noise_rng);
      record(g, rec.u, y_next, w);
      x = std::move(x_next);
      y = std::move(y_next);

      // Online conformal update for the horizon that has just completed.
      if (table && window.size() >= static_cast<std::size_t>(t_init + N) && t + 1 >= N) {
        const VectorXd r = horizon_residuals(window, *predictor, window.size() - static_cast<std::size_t>(N));
        for (Index i = 0; i < N; ++i)
          for (Index j = 0; j < dims.n_y; ++j) table->push(i, j, r[i * dims.n_y + j]);
      }
      res.log.push_back(std::move(rec));
      res.bands.push_back(band);
    } catch (const Error& e) {
      throw Error(e.code(), "online step " + std::to_string(t) + ": " + e.what());
    }
  }

  res.kpi = compute_kpis(res.log, res.bands, dt);
  res.kpi.mean_solve_time = solves ? solve_time_sum / static_cast<double>(solves) : 0.0;
  return res;
}

inline nlohmann::json to_json(const KpiReport& k) {
  nlohmann::json j{{"violation_ratio", k.violation_ratio},
                   {"violation_magnitude_kh", k.violation_magnitude_kh},
                   {"energy_kwh", k.energy_kwh},
                   {"backup_activation_steps", k.backup_activation_steps},
                   {"dpc_steps", k.dpc_steps},
                   {"dpc_fallbacks", k.dpc_fallbacks},
                   {"counted_steps", k.counted_steps},
                   {"mean_solve_time", k.mean_solve_time}};
  j["relative_energy_pct"] = k.relative_energy_pct ? nlohmann::json(*k.relative_energy_pct) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const RunMeta& m) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return nlohmann::json{{"alpha", m.alpha},
                        {"alpha_0", m.alpha_0},
                        {"eta", m.eta},
                        {"delta_bar", m.delta_bar},
                        {"epsilon", m.epsilon},
                        {"y_lim_lower", vec(m.y_lim_lower)},
                        {"y_lim_upper", vec(m.y_lim_upper)},
                        {"dt_minutes", m.dt_minutes},
                        {"seed", m.seed}};
}

inline RunMeta meta_from_json(const nlohmann::json& j) {
  try {
    RunMeta m;
    m.alpha = j.at("alpha").get<double>();
    m.alpha_0 = j.at("alpha_0").get<double>();
    m.eta = j.at("eta").get<double>();
    m.delta_bar = j.at("delta_bar").get<std::int64_t>();
    m.epsilon = j.at("epsilon").get<double>();
    const auto lo = j.at("y_lim_lower").get<std::vector<double>>();
    const auto hi = j.at("y_lim_upper").get<std::vector<double>>();
    m.y_lim_lower = Eigen::Map<const VectorXd>(lo.data(), static_cast<Index>(lo.size()));
    m.y_lim_upper = Eigen::Map<const VectorXd>(hi.data(), static_cast<Index>(hi.size()));
    m.dt_minutes = j.value("dt_minutes", 15.0);
    m.seed = j.value("seed", std::uint64_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedLog, std::string("run metadata: ") + e.what());
  }
}

}  // namespace dadpc
