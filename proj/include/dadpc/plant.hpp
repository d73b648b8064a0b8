#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/schedule.hpp"

namespace dadpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Discrete-time linear thermal model
///   x+ = A x + B_u sat(u) + B_w w + process noise,   y = C x+ + measurement noise.
struct RcModel {
  MatrixXd A;
  MatrixXd B_u;
  MatrixXd B_w;
  MatrixXd C;
  double process_noise_std = 0.0;
  double meas_noise_std = 0.1;
  VectorXd x0;
  double dt_minutes = 15.0;
  // When positive, the input enters as u_sat * tanh(u / u_sat).
  double input_saturation = 0.0;

  [[nodiscard]] Index n_x() const { return A.rows(); }
  [[nodiscard]] Index n_u() const { return B_u.cols(); }
  [[nodiscard]] Index n_w() const { return B_w.cols(); }
  [[nodiscard]] Index n_y() const { return C.rows(); }

  void validate() const {
    const Index n = A.rows();
    require(A.cols() == n && n > 0, ErrorCode::DimensionMismatch, "A must be square");
    require(B_u.rows() == n && B_w.rows() == n && C.cols() == n && x0.size() == n, ErrorCode::DimensionMismatch,
            "plant matrices have inconsistent dimensions");
    require(dt_minutes > 0.0, ErrorCode::ConfigError, "dt must be positive");
    require(process_noise_std >= 0.0 && meas_noise_std >= 0.0, ErrorCode::ConfigError,
            "noise levels must be nonnegative");
    const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
    require(rho < 1.0, ErrorCode::ConfigError, "A is not Schur stable (spectral radius " + csv::format(rho) + ")");
  }
};

template <typename Rng>
VectorXd gaussian(Index n, double std, Rng& rng) {
  VectorXd v(n);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Index i = 0; i < n; ++i) v[i] = std * nd(rng);
  return v;
}

/// One sampling interval. Returns (x_next, measured y).
template <typename Rng>
std::pair<VectorXd, VectorXd> simulate_step(const RcModel& m, const VectorXd& x, const VectorXd& u, const VectorXd& w,
                                            Rng& rng) {
  require(u.allFinite() && w.allFinite(), ErrorCode::NonFiniteState, "plant inputs must be finite");
  VectorXd ue = u;
  if (m.input_saturation > 0.0) ue = m.input_saturation * (u.array() / m.input_saturation).tanh();
  VectorXd x_next = m.A * x + m.B_u * ue + m.B_w * w;
  if (m.process_noise_std > 0.0) x_next += gaussian(m.n_x(), m.process_noise_std, rng);
  VectorXd y = m.C * x_next;
  if (m.meas_noise_std > 0.0) y += gaussian(m.n_y(), m.meas_noise_std, rng);
  require(x_next.allFinite() && y.allFinite(), ErrorCode::NonFiniteState, "plant state diverged");
  return {std::move(x_next), std::move(y)};
}

enum class BackupMode { Heat, Cool };

/// Hysteresis (bang-bang) thermostat.
///
/// Heat: on below setpoint - deadband, off at or above setpoint, otherwise
/// holds the previous output. Cool mirrors this around the setpoint.
class BackupPolicy {
 public:
  BackupPolicy() = default;
  BackupPolicy(double setpoint, double deadband, BackupMode mode, VectorXd u_min, VectorXd u_max)
      : setpoint_(setpoint), deadband_(deadband), mode_(mode), u_min_(std::move(u_min)), u_max_(std::move(u_max)) {
    require(deadband > 0.0, ErrorCode::ConfigError, "backup deadband must be positive");
    require(u_min_.size() == u_max_.size(), ErrorCode::DimensionMismatch, "backup input bounds differ in size");
  }

  /// Updates the relay state from a measurement and returns the input.
  VectorXd operator()(const VectorXd& y) {
    observe(y);
    return output();
  }

  void observe(const VectorXd& y) {
    if (mode_ == BackupMode::Heat) {
      const double v = y.minCoeff();
      if (v < setpoint_ - deadband_) on_ = true;
      else if (v >= setpoint_) on_ = false;
    } else {
      const double v = y.maxCoeff();
      if (v > setpoint_ + deadband_) on_ = true;
      else if (v <= setpoint_) on_ = false;
    }
  }

  [[nodiscard]] VectorXd output() const { return on_ ? u_max_ : u_min_; }
  [[nodiscard]] bool on() const { return on_; }
  void set_on(bool on) { on_ = on; }
  [[nodiscard]] double setpoint() const { return setpoint_; }
  void set_setpoint(double sp) { setpoint_ = sp; }
  [[nodiscard]] double deadband() const { return deadband_; }
  [[nodiscard]] BackupMode mode() const { return mode_; }
  [[nodiscard]] const VectorXd& u_min() const { return u_min_; }
  [[nodiscard]] const VectorXd& u_max() const { return u_max_; }

 private:
  double setpoint_ = 22.0;
  double deadband_ = 1.0;
  BackupMode mode_ = BackupMode::Heat;
  VectorXd u_min_;
  VectorXd u_max_;
  bool on_ = false;
};

/// Stateless form of one thermostat decision.
inline VectorXd backup_policy(double setpoint, double deadband, const VectorXd& y, BackupMode mode,
                              const VectorXd& u_min, const VectorXd& u_max, bool previously_on) {
  BackupPolicy b(setpoint, deadband, mode, u_min, u_max);
  b.set_on(previously_on);
  return b(y);
}

struct SyntheticWeather {
  double mean_temp = 0.0;        // degC
  double amplitude = 4.0;        // degC
  int peak_minute = 15 * 60;     // minute of day of the temperature maximum
  double noise_std = 1.0;        // stationary std of the AR(1) deviation, degC
  double noise_corr = 0.98;      // AR(1) coefficient per step
  double solar_peak = 0.3;       // kW/m2
  int daylight_start = 8 * 60;
  int daylight_end = 16 * 60 + 30;
  double cloud_min = 0.2;        // daily cloud factor drawn from [cloud_min, 1]
  // Temperature offset applied on [snap_start, snap_start + snap_steps).
  std::int64_t snap_start = 0;
  std::int64_t snap_steps = 0;
  double snap_delta = 0.0;
  bool snap_in_forecast = true;
};

/// External inputs w = (outdoor temperature degC, solar irradiance kW/m2).
///
/// The realized trace is generated on demand and cached, so realization and
/// forecast always read the same underlying values. Forecasts add i.i.d.
/// noise per w-dimension; solar forecasts are clipped at zero.
class WeatherSource {
 public:
  enum class Mode { Synthetic, CsvFile };

  WeatherSource(SyntheticWeather params, double dt_minutes, std::uint64_t trace_seed, std::uint64_t forecast_seed,
                VectorXd forecast_noise_std)
      : mode_(Mode::Synthetic), syn_(params), dt_minutes_(dt_minutes), trace_rng_(trace_seed),
        forecast_rng_(forecast_seed), forecast_noise_(std::move(forecast_noise_std)) {
    require(forecast_noise_.size() == 2, ErrorCode::DimensionMismatch, "forecast noise needs one entry per w");
    require(syn_.noise_corr >= 0.0 && syn_.noise_corr < 1.0, ErrorCode::ConfigError,
            "weather noise correlation must lie in [0, 1)");
  }

  static WeatherSource from_csv(const std::string& path, double dt_minutes, std::uint64_t forecast_seed,
                                VectorXd forecast_noise_std) {
    WeatherSource src(SyntheticWeather{}, dt_minutes, 0, forecast_seed, std::move(forecast_noise_std));
    src.mode_ = Mode::CsvFile;
    auto in = csv::open_in(path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::IoError, "empty weather CSV");
    auto header = csv::split(csv::trim(line));
    require(header.size() == 3 && csv::trim(header[0]) == "step" && csv::trim(header[1]) == "temp_c" &&
                csv::trim(header[2]) == "solar_kw_m2",
            ErrorCode::IoError, "weather CSV header must be 'step,temp_c,solar_kw_m2'");
    std::int64_t expect = 0;
    while (std::getline(in, line)) {
      auto t = csv::trim(line);
      if (t.empty()) continue;
      auto f = csv::split(t);
      require(f.size() == 3, ErrorCode::IoError, "weather CSV rows need three fields");
      require(csv::parse_int(f[0]) == expect, ErrorCode::IoError,
              "weather CSV steps must be consecutive from 0 (expected " + std::to_string(expect) + ")");
      Eigen::Vector2d w(csv::parse_double(f[1]), csv::parse_double(f[2]));
      require(w.allFinite(), ErrorCode::IoError, "weather CSV contains non-finite values");
      src.trace_.push_back(w);
      ++expect;
    }
    return src;
  }

  [[nodiscard]] Mode mode() const { return mode_; }
  [[nodiscard]] static constexpr Index n_w() { return 2; }

  /// Realized w at step t.
  const Eigen::Vector2d& at(std::int64_t t) {
    require(t >= 0, ErrorCode::CsvExhausted, "weather requested at negative step");
    ensure(t);
    return trace_[static_cast<std::size_t>(t)];
  }

  /// Realized w at t and an N-step forecast of w over [t, t + N), stacked per step.
  std::pair<VectorXd, VectorXd> horizon(std::int64_t t, Index N) {
    ensure(t + N - 1);
    VectorXd pred(N * 2);
    for (Index i = 0; i < N; ++i) {
      Eigen::Vector2d w = trace_[static_cast<std::size_t>(t + i)];
      if (mode_ == Mode::Synthetic && !syn_.snap_in_forecast) w[0] -= snap_offset(t + i);
      for (Index k = 0; k < 2; ++k)
        if (forecast_noise_[k] > 0.0) w[k] += forecast_noise_[k] * forecast_nd_(forecast_rng_);
      w[1] = std::max(0.0, w[1]);
      pred.segment(i * 2, 2) = w;
    }
    return {VectorXd(trace_[static_cast<std::size_t>(t)]), pred};
  }

 private:
  [[nodiscard]] double snap_offset(std::int64_t t) const {
    return (t >= syn_.snap_start && t < syn_.snap_start + syn_.snap_steps) ? syn_.snap_delta : 0.0;
  }

  void ensure(std::int64_t t) {
    if (t < static_cast<std::int64_t>(trace_.size())) return;
    require(mode_ == Mode::Synthetic, ErrorCode::CsvExhausted,
            "weather CSV ends at step " + std::to_string(trace_.size()) + ", step " + std::to_string(t) +
                " requested");
    std::uniform_real_distribution<double> cloud(syn_.cloud_min, 1.0);
    const double innov = syn_.noise_std * std::sqrt(1.0 - syn_.noise_corr * syn_.noise_corr);
    while (static_cast<std::int64_t>(trace_.size()) <= t) {
      const auto k = static_cast<std::int64_t>(trace_.size());
      const double minute = std::fmod(static_cast<double>(k) * dt_minutes_, kMinutesPerDay);
      const auto day = static_cast<std::int64_t>(std::floor(static_cast<double>(k) * dt_minutes_ / kMinutesPerDay));
      if (day != cloud_day_) {
        cloud_day_ = day;
        cloud_factor_ = cloud(trace_rng_);
      }
      ar_ = k == 0 ? syn_.noise_std * trace_nd_(trace_rng_) : syn_.noise_corr * ar_ + innov * trace_nd_(trace_rng_);
      const double phase = 2.0 * std::numbers::pi * (minute - syn_.peak_minute) / kMinutesPerDay;
      const double temp = syn_.mean_temp + syn_.amplitude * std::cos(phase) + ar_ + snap_offset(k);
      double solar = 0.0;
      if (minute >= syn_.daylight_start && minute < syn_.daylight_end) {
        const double f = (minute - syn_.daylight_start) / (syn_.daylight_end - syn_.daylight_start);
        solar = syn_.solar_peak * cloud_factor_ * std::sin(std::numbers::pi * f);
      }
      trace_.emplace_back(temp, solar);
    }
  }

  Mode mode_;
  SyntheticWeather syn_;
  double dt_minutes_;
  std::mt19937_64 trace_rng_;
  std::mt19937_64 forecast_rng_;
  // Kept across calls: a fresh distribution would drop its cached variate and
  // make the trace depend on how far ahead it was requested.
  std::normal_distribution<double> trace_nd_;
  std::normal_distribution<double> forecast_nd_;
  VectorXd forecast_noise_;
  std::vector<Eigen::Vector2d> trace_;
  double ar_ = 0.0;
  std::int64_t cloud_day_ = -1;
  double cloud_factor_ = 1.0;
};

}  // namespace dadpc
