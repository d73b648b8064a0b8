#pragma once

#include <Eigen/Dense>
#include <toml.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dadpc/errors.hpp"
#include "dadpc/plant.hpp"
#include "dadpc/rbdpc.hpp"
#include "dadpc/schedule.hpp"
#include "dadpc/supervisor.hpp"

namespace dadpc {

struct ControllerConfig {
  Index N = 96;
  Index t_init = 12;
  double Q_g = 0.01;
  double Q_delta = 10.0;
  double eta = 0.5;
  double alpha = 0.05;
  double alpha_0 = 0.0;
  std::size_t T = 672;
  std::size_t T_c = 672;
  std::size_t window_cap = 0;  // 0: use the calibration n_cal
  std::int64_t rebuild_period = 96;  // 0 disables rebuilds
  VectorXd linear_u = VectorXd::Ones(1);
  VectorXd quad_u;
  QpSettings qp;
};

struct BackupConfig {
  double setpoint = 22.5;
  double deadband = 1.0;
  BackupMode mode = BackupMode::Heat;
  BackupContract contract;
};

/// Excitation applied to the backup while collecting offline data.
struct CollectionConfig {
  double setpoint_jitter = 1.0;    // setpoint drawn from setpoint +/- jitter
  std::int64_t jitter_period = 16;  // steps between setpoint draws
  double power_fraction_min = 0.4;  // "on" power drawn from [min, 1] * u_max each step
};

struct WeatherConfig {
  bool from_csv = false;
  std::string csv_path;
  std::uint64_t seed = 7;
  SyntheticWeather synthetic;
  VectorXd forecast_noise_std = VectorXd::Zero(2);
};

struct RunConfig {
  std::int64_t horizon_steps = 1344;
  std::uint64_t seed = 1;
  bool baseline = true;
};

/// Everything a closed-loop run depends on.
struct ScenarioConfig {
  RcModel plant;
  VectorXd u_min;
  VectorXd u_max;
  ComfortSchedule schedule;
  ControllerConfig controller;
  BackupConfig backup;
  CollectionConfig collection;
  WeatherConfig weather;
  RunConfig run;

  void validate() const {
    plant.validate();
    require(u_min.size() == plant.n_u() && u_max.size() == plant.n_u(), ErrorCode::ConfigError,
            "u_min and u_max need n_u entries");
    require((u_min.array() <= u_max.array()).all(), ErrorCode::ConfigError, "u_min must not exceed u_max");
    require(plant.n_w() == WeatherSource::n_w(), ErrorCode::ConfigError, "the weather source provides two signals");
    const auto& c = controller;
    require(c.alpha > 0.0 && c.alpha <= 1.0, ErrorCode::ConfigError, "alpha must lie in (0, 1]");
    require(c.alpha_0 >= 0.0, ErrorCode::ConfigError, "alpha_0 must be nonnegative");
    require(c.eta > 0.0, ErrorCode::ConfigError, "eta must be positive");
    require(c.N >= 1 && c.t_init >= 1, ErrorCode::ConfigError, "N and t_init must be at least 1");
    require(c.Q_g >= 0.0 && c.Q_delta > 0.0, ErrorCode::ConfigError, "Q_g must be >= 0 and Q_delta > 0");
    require(c.T >= static_cast<std::size_t>(c.t_init + c.N), ErrorCode::ConfigError, "T must be at least t_init + N");
    require(c.rebuild_period >= 0, ErrorCode::ConfigError, "rebuild_period must be nonnegative");
    require(run.horizon_steps >= 1, ErrorCode::ConfigError, "horizon_steps must be at least 1");
    const auto& k = backup.contract;
    require(k.y_lim_lower.size() == plant.n_y() && k.y_lim_upper.size() == plant.n_y(), ErrorCode::ConfigError,
            "Y_lim needs n_y entries");
    require(k.epsilon >= 0.0 && k.epsilon <= c.alpha, ErrorCode::ConfigError, "epsilon must lie in [0, alpha]");
    require(k.delta_bar >= 1, ErrorCode::ConfigError, "delta_bar must be positive");
    require(collection.jitter_period >= 1 && collection.power_fraction_min >= 0.0 &&
                collection.power_fraction_min <= 1.0,
            ErrorCode::ConfigError, "invalid collection excitation");
    schedule.check_total();
    for (const auto& r : schedule.rules()) check_inside_ylim(r.band);
    if (schedule.default_band()) check_inside_ylim(*schedule.default_band());
  }

 private:
  void check_inside_ylim(const ComfortBand& b) const {
    const auto& k = backup.contract;
    require(b.lb.size() == plant.n_y(), ErrorCode::ConfigError, "comfort bands need n_y entries");
    for (Index j = 0; j < b.lb.size(); ++j)
      require(k.y_lim_lower[j] <= b.lb[j] && (k.y_lim_upper[j] >= b.ub[j] || std::isinf(b.ub[j])),
              ErrorCode::ConfigError, "Y_lim must contain every bounded comfort band");
  }
};

namespace detail {

inline std::string where(std::string_view section, std::string_view key) {
  return "[" + std::string(section) + "] " + std::string(key);
}

inline double as_double(const toml::node& n, const std::string& ctx) {
  if (auto v = n.value<double>()) return *v;
  throw Error(ErrorCode::ConfigError, ctx + " must be a number");
}

inline VectorXd as_vector(const toml::node& n, const std::string& ctx) {
  if (n.is_number()) return VectorXd::Constant(1, as_double(n, ctx));
  const auto* arr = n.as_array();
  require(arr != nullptr, ErrorCode::ConfigError, ctx + " must be a number array");
  VectorXd v(static_cast<Index>(arr->size()));
  for (std::size_t i = 0; i < arr->size(); ++i) v[static_cast<Index>(i)] = as_double(*arr->get(i), ctx);
  return v;
}

inline MatrixXd as_matrix(const toml::node& n, const std::string& ctx) {
  const auto* arr = n.as_array();
  require(arr != nullptr && !arr->empty(), ErrorCode::ConfigError, ctx + " must be an array of rows");
  const Index rows = static_cast<Index>(arr->size());
  Index cols = -1;
  MatrixXd m;
  for (Index r = 0; r < rows; ++r) {
    const VectorXd row = as_vector(*arr->get(static_cast<std::size_t>(r)), ctx);
    if (cols < 0) {
      cols = row.size();
      m.resize(rows, cols);
    }
    require(row.size() == cols, ErrorCode::ConfigError, ctx + " rows differ in length");
    m.row(r) = row.transpose();
  }
  return m;
}

// Typed lookup with a default; rejects present-but-mistyped values.
template <typename T>
T get(const toml::table* tbl, std::string_view section, std::string_view key, T fallback) {
  if (!tbl) return fallback;
  const toml::node* n = tbl->get(key);
  if (!n) return fallback;
  const std::string ctx = where(section, key);
  if constexpr (std::is_same_v<T, double>) {
    return as_double(*n, ctx);
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n->value<bool>()) return *v;
    throw Error(ErrorCode::ConfigError, ctx + " must be a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n->value<std::string>()) return *v;
    throw Error(ErrorCode::ConfigError, ctx + " must be a string");
  } else if constexpr (std::is_same_v<T, VectorXd>) {
    return as_vector(*n, ctx);
  } else {
    if (auto v = n->value<std::int64_t>()) {
      require(*v >= 0 || std::is_signed_v<T>, ErrorCode::ConfigError, ctx + " must be nonnegative");
      return static_cast<T>(*v);
    }
    throw Error(ErrorCode::ConfigError, ctx + " must be an integer");
  }
}

inline const toml::table* section(const toml::table& root, std::string_view name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  const auto* t = n->as_table();
  require(t != nullptr, ErrorCode::ConfigError, "[" + std::string(name) + "] must be a table");
  return t;
}

inline void reject_unknown(const toml::table* tbl, std::string_view name, std::initializer_list<std::string_view> keys) {
  if (!tbl) return;
  for (const auto& [k, v] : *tbl) {
    bool known = false;
    for (auto key : keys) known = known || k.str() == key;
    require(known, ErrorCode::ConfigError, "unknown key " + where(name, k.str()));
  }
}

inline int parse_clock(const std::string& s, const std::string& ctx) {
  require(s.size() == 5 && s[2] == ':', ErrorCode::ConfigError, ctx + " must be HH:MM");
  const int h = std::stoi(s.substr(0, 2)), m = std::stoi(s.substr(3, 2));
  require(h >= 0 && h <= 24 && m >= 0 && m < 60 && h * 60 + m <= kMinutesPerDay, ErrorCode::ConfigError,
          ctx + " is not a valid time of day");
  return h * 60 + m;
}

inline std::uint8_t parse_days(const toml::node* n, const std::string& ctx) {
  if (!n) return kEveryDay;
  if (auto s = n->value<std::string>()) {
    if (*s == "weekdays") return kWeekdays;
    if (*s == "weekend") return kWeekend;
    if (*s == "all") return kEveryDay;
    throw Error(ErrorCode::ConfigError, ctx + " must be 'weekdays', 'weekend', 'all' or a list of day names");
  }
  const auto* arr = n->as_array();
  require(arr != nullptr, ErrorCode::ConfigError, ctx + " must be a string or an array of day names");
  static constexpr std::string_view names[] = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
  std::uint8_t mask = 0;
  for (const auto& e : *arr) {
    auto s = e.value<std::string>();
    require(s.has_value(), ErrorCode::ConfigError, ctx + " entries must be strings");
    int idx = -1;
    for (int d = 0; d < 7; ++d)
      if (*s == names[d]) idx = d;
    require(idx >= 0, ErrorCode::ConfigError, ctx + ": unknown day '" + *s + "'");
    mask = static_cast<std::uint8_t>(mask | (1u << idx));
  }
  return mask;
}

}  // namespace detail

/// Parses a scenario from TOML text. Missing keys take their defaults except
/// the plant matrices, which must be given.
inline ScenarioConfig parse_scenario(std::string_view text, const std::string& source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string(e.description()) + " in " + source);
  }
  using detail::get;
  for (const auto& [k, v] : root) {
    const std::string_view key = k.str();
    require(key == "plant" || key == "schedule" || key == "controller" || key == "backup" || key == "collection" ||
                key == "weather" || key == "run",
            ErrorCode::ConfigError, "unknown section [" + std::string(key) + "]");
  }

  ScenarioConfig cfg;
  const auto* pl = detail::section(root, "plant");
  require(pl != nullptr, ErrorCode::ConfigError, "missing [plant] section");
  detail::reject_unknown(pl, "plant",
                         {"A", "B_u", "B_w", "C", "x0", "dt_minutes", "process_noise_std", "meas_noise_std",
                          "input_saturation", "u_min", "u_max"});
  for (const char* key : {"A", "B_u", "B_w", "C", "x0"})
    require(pl->get(key) != nullptr, ErrorCode::ConfigError, "missing " + detail::where("plant", key));
  cfg.plant.A = detail::as_matrix(*pl->get("A"), "[plant] A");
  cfg.plant.B_u = detail::as_matrix(*pl->get("B_u"), "[plant] B_u");
  cfg.plant.B_w = detail::as_matrix(*pl->get("B_w"), "[plant] B_w");
  cfg.plant.C = detail::as_matrix(*pl->get("C"), "[plant] C");
  cfg.plant.x0 = detail::as_vector(*pl->get("x0"), "[plant] x0");
  cfg.plant.dt_minutes = get<double>(pl, "plant", "dt_minutes", 15.0);
  cfg.plant.process_noise_std = get<double>(pl, "plant", "process_noise_std", 0.0);
  cfg.plant.meas_noise_std = get<double>(pl, "plant", "meas_noise_std", 0.1);
  cfg.plant.input_saturation = get<double>(pl, "plant", "input_saturation", 0.0);
  cfg.u_min = get<VectorXd>(pl, "plant", "u_min", VectorXd::Zero(cfg.plant.n_u()));
  require(pl->get("u_max") != nullptr, ErrorCode::ConfigError, "missing [plant] u_max");
  cfg.u_max = get<VectorXd>(pl, "plant", "u_max", VectorXd());
  const Index n_y = cfg.plant.n_y();

  const auto* sc = detail::section(root, "schedule");
  detail::reject_unknown(sc, "schedule", {"default_lb", "default_ub", "rule"});
  std::vector<ScheduleRule> rules;
  std::optional<ComfortBand> fallback;
  const double inf = std::numeric_limits<double>::infinity();
  if (sc && sc->get("default_lb")) {
    fallback = ComfortBand{get<VectorXd>(sc, "schedule", "default_lb", VectorXd()),
                           get<VectorXd>(sc, "schedule", "default_ub", VectorXd::Constant(n_y, inf))};
  }
  if (sc && sc->get("rule")) {
    const auto* arr = sc->get("rule")->as_array();
    require(arr != nullptr, ErrorCode::ConfigError, "[[schedule.rule]] must be an array of tables");
    for (const auto& e : *arr) {
      const auto* rt = e.as_table();
      require(rt != nullptr, ErrorCode::ConfigError, "[[schedule.rule]] entries must be tables");
      detail::reject_unknown(rt, "schedule.rule", {"days", "start", "end", "lb", "ub"});
      ScheduleRule r;
      r.day_mask = detail::parse_days(rt->get("days"), "[schedule.rule] days");
      r.start_minute = detail::parse_clock(get<std::string>(rt, "schedule.rule", "start", "00:00"), "start");
      r.end_minute = detail::parse_clock(get<std::string>(rt, "schedule.rule", "end", "24:00"), "end");
      require(rt->get("lb") != nullptr, ErrorCode::ConfigError, "[[schedule.rule]] needs lb");
      r.band.lb = get<VectorXd>(rt, "schedule.rule", "lb", VectorXd());
      r.band.ub = get<VectorXd>(rt, "schedule.rule", "ub", VectorXd::Constant(r.band.lb.size(), inf));
      rules.push_back(std::move(r));
    }
  }
  if (rules.empty() && !fallback) {
    cfg.schedule = heating_schedule(21.0, 18.0, cfg.plant.dt_minutes);
  } else {
    cfg.schedule = ComfortSchedule(std::move(rules), std::move(fallback), cfg.plant.dt_minutes);
  }

  const auto* ct = detail::section(root, "controller");
  detail::reject_unknown(ct, "controller",
                         {"N", "t_init", "Q_g", "Q_delta", "eta", "alpha", "alpha_0", "T", "T_c", "window_cap",
                          "rebuild_period", "linear_u", "quad_u", "qp_tol_kkt", "qp_tol_feas", "qp_max_iter"});
  auto& c = cfg.controller;
  c.N = get<Index>(ct, "controller", "N", c.N);
  c.t_init = get<Index>(ct, "controller", "t_init", c.t_init);
  c.Q_g = get<double>(ct, "controller", "Q_g", c.Q_g);
  c.Q_delta = get<double>(ct, "controller", "Q_delta", c.Q_delta);
  c.eta = get<double>(ct, "controller", "eta", c.eta);
  c.alpha = get<double>(ct, "controller", "alpha", c.alpha);
  c.alpha_0 = get<double>(ct, "controller", "alpha_0", c.alpha_0);
  c.T = get<std::size_t>(ct, "controller", "T", c.T);
  c.T_c = get<std::size_t>(ct, "controller", "T_c", c.T_c);
  c.window_cap = get<std::size_t>(ct, "controller", "window_cap", c.window_cap);
  c.rebuild_period = get<std::int64_t>(ct, "controller", "rebuild_period", c.rebuild_period);
  c.linear_u = get<VectorXd>(ct, "controller", "linear_u", VectorXd::Ones(cfg.plant.n_u()));
  c.quad_u = get<VectorXd>(ct, "controller", "quad_u", VectorXd());
  c.qp.tol_kkt = get<double>(ct, "controller", "qp_tol_kkt", c.qp.tol_kkt);
  c.qp.tol_feas = get<double>(ct, "controller", "qp_tol_feas", c.qp.tol_feas);
  c.qp.max_iter = static_cast<int>(get<std::int64_t>(ct, "controller", "qp_max_iter", c.qp.max_iter));

  const auto* bk = detail::section(root, "backup");
  detail::reject_unknown(bk, "backup",
                         {"setpoint", "deadband", "mode", "y_lim_lower", "y_lim_upper", "delta_bar", "epsilon"});
  auto& b = cfg.backup;
  b.setpoint = get<double>(bk, "backup", "setpoint", b.setpoint);
  b.deadband = get<double>(bk, "backup", "deadband", b.deadband);
  const std::string mode = get<std::string>(bk, "backup", "mode", "heat");
  require(mode == "heat" || mode == "cool", ErrorCode::ConfigError, "[backup] mode must be 'heat' or 'cool'");
  b.mode = mode == "heat" ? BackupMode::Heat : BackupMode::Cool;
  b.contract.y_lim_lower = get<VectorXd>(bk, "backup", "y_lim_lower", VectorXd::Constant(n_y, 15.0));
  b.contract.y_lim_upper = get<VectorXd>(bk, "backup", "y_lim_upper", VectorXd::Constant(n_y, 30.0));
  b.contract.delta_bar = get<std::int64_t>(bk, "backup", "delta_bar", 96);
  b.contract.epsilon = get<double>(bk, "backup", "epsilon", 0.0);

  const auto* co = detail::section(root, "collection");
  detail::reject_unknown(co, "collection", {"setpoint_jitter", "jitter_period", "power_fraction_min"});
  auto& col = cfg.collection;
  col.setpoint_jitter = get<double>(co, "collection", "setpoint_jitter", col.setpoint_jitter);
  col.jitter_period = get<std::int64_t>(co, "collection", "jitter_period", col.jitter_period);
  col.power_fraction_min = get<double>(co, "collection", "power_fraction_min", col.power_fraction_min);

  const auto* we = detail::section(root, "weather");
  detail::reject_unknown(we, "weather",
                         {"source", "csv_path", "seed", "mean_temp", "amplitude", "peak_hour", "noise_std",
                          "noise_corr", "solar_peak", "daylight_start", "daylight_end", "cloud_min",
                          "forecast_noise_std", "snap_start", "snap_steps", "snap_delta", "snap_in_forecast"});
  auto& w = cfg.weather;
  const std::string src = get<std::string>(we, "weather", "source", "synthetic");
  require(src == "synthetic" || src == "csv", ErrorCode::ConfigError, "[weather] source must be 'synthetic' or 'csv'");
  w.from_csv = src == "csv";
  w.csv_path = get<std::string>(we, "weather", "csv_path", "");
  require(!w.from_csv || !w.csv_path.empty(), ErrorCode::ConfigError, "[weather] csv_path is required for csv");
  w.seed = get<std::uint64_t>(we, "weather", "seed", w.seed);
  auto& s = w.synthetic;
  s.mean_temp = get<double>(we, "weather", "mean_temp", s.mean_temp);
  s.amplitude = get<double>(we, "weather", "amplitude", s.amplitude);
  s.peak_minute = static_cast<int>(std::lround(60.0 * get<double>(we, "weather", "peak_hour", s.peak_minute / 60.0)));
  s.noise_std = get<double>(we, "weather", "noise_std", s.noise_std);
  s.noise_corr = get<double>(we, "weather", "noise_corr", s.noise_corr);
  s.solar_peak = get<double>(we, "weather", "solar_peak", s.solar_peak);
  s.daylight_start = detail::parse_clock(get<std::string>(we, "weather", "daylight_start", "08:00"), "daylight_start");
  s.daylight_end = detail::parse_clock(get<std::string>(we, "weather", "daylight_end", "16:30"), "daylight_end");
  s.cloud_min = get<double>(we, "weather", "cloud_min", s.cloud_min);
  s.snap_start = get<std::int64_t>(we, "weather", "snap_start", s.snap_start);
  s.snap_steps = get<std::int64_t>(we, "weather", "snap_steps", s.snap_steps);
  s.snap_delta = get<double>(we, "weather", "snap_delta", s.snap_delta);
  s.snap_in_forecast = get<bool>(we, "weather", "snap_in_forecast", s.snap_in_forecast);
  w.forecast_noise_std = get<VectorXd>(we, "weather", "forecast_noise_std", VectorXd::Zero(2));
  require(w.forecast_noise_std.size() == 2 && (w.forecast_noise_std.array() >= 0.0).all(), ErrorCode::ConfigError,
          "[weather] forecast_noise_std needs two nonnegative entries");

  const auto* rn = detail::section(root, "run");
  detail::reject_unknown(rn, "run", {"horizon_steps", "seed", "baseline"});
  cfg.run.horizon_steps = get<std::int64_t>(rn, "run", "horizon_steps", cfg.run.horizon_steps);
  cfg.run.seed = get<std::uint64_t>(rn, "run", "seed", cfg.run.seed);
  cfg.run.baseline = get<bool>(rn, "run", "baseline", cfg.run.baseline);

  cfg.validate();
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  auto in = csv::open_in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_scenario(text, path);
}

}  // namespace dadpc
