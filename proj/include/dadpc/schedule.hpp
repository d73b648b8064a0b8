#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dadpc/errors.hpp"

namespace dadpc {

using Eigen::VectorXd;

inline constexpr int kMinutesPerDay = 1440;
inline constexpr int kMinutesPerWeek = 7 * kMinutesPerDay;

/// Per-output comfort box; ub entries may be +inf.
struct ComfortBand {
  VectorXd lb;
  VectorXd ub;
};

/// Day mask bits: bit 0 = Monday ... bit 6 = Sunday.
inline constexpr std::uint8_t kWeekdays = 0b0011111;
inline constexpr std::uint8_t kWeekend = 0b1100000;
inline constexpr std::uint8_t kEveryDay = 0b1111111;

struct ScheduleRule {
  std::uint8_t day_mask = kEveryDay;
  int start_minute = 0;  // inclusive, minute of day
  int end_minute = kMinutesPerDay;  // exclusive
  ComfortBand band;
};

/// Weekly comfort schedule. Step 0 is Monday 00:00. The first rule covering a
/// minute wins; minutes not covered by any rule use the default band.
class ComfortSchedule {
 public:
  ComfortSchedule() = default;
  ComfortSchedule(std::vector<ScheduleRule> rules, std::optional<ComfortBand> fallback, double dt_minutes)
      : rules_(std::move(rules)), default_(std::move(fallback)), dt_minutes_(dt_minutes) {
    require(dt_minutes > 0.0, ErrorCode::ConfigError, "sampling interval must be positive");
    for (const auto& r : rules_) {
      require(r.start_minute >= 0 && r.end_minute <= kMinutesPerDay && r.start_minute < r.end_minute,
              ErrorCode::ConfigError, "schedule rule window must satisfy 0 <= start < end <= 1440");
      check_band(r.band);
    }
    if (default_) check_band(*default_);
  }

  [[nodiscard]] double dt_minutes() const { return dt_minutes_; }
  [[nodiscard]] const std::vector<ScheduleRule>& rules() const { return rules_; }
  [[nodiscard]] const std::optional<ComfortBand>& default_band() const { return default_; }

  [[nodiscard]] static int minute_of_week(std::int64_t t, double dt_minutes) {
    const auto m = static_cast<std::int64_t>(std::floor(static_cast<double>(t) * dt_minutes));
    return static_cast<int>(((m % kMinutesPerWeek) + kMinutesPerWeek) % kMinutesPerWeek);
  }

  [[nodiscard]] const ComfortBand& comfort_at(std::int64_t t) const {
    const int mow = minute_of_week(t, dt_minutes_);
    const int day = mow / kMinutesPerDay;
    const int minute = mow % kMinutesPerDay;
    for (const auto& r : rules_)
      if ((r.day_mask >> day & 1) && minute >= r.start_minute && minute < r.end_minute) return r.band;
    if (default_) return *default_;
    throw Error(ErrorCode::ScheduleGap, "no comfort band at step " + std::to_string(t));
  }

  /// Checks that every step of the week maps to a band.
  void check_total() const {
    const auto steps = static_cast<std::int64_t>(std::ceil(kMinutesPerWeek / dt_minutes_));
    for (std::int64_t t = 0; t < steps; ++t) (void)comfort_at(t);
  }

 private:
  static void check_band(const ComfortBand& b) {
    require(b.lb.size() == b.ub.size() && b.lb.size() > 0, ErrorCode::DimensionMismatch,
            "comfort band lb and ub must have the same positive length");
    require((b.lb.array() <= b.ub.array()).all() && !b.lb.hasNaN() && !b.ub.hasNaN(), ErrorCode::ConfigError,
            "comfort band needs lb <= ub");
  }

  std::vector<ScheduleRule> rules_;
  std::optional<ComfortBand> default_;
  double dt_minutes_ = 15.0;
};

/// Heating-season schedule: `occupied_lb` on weekdays 08:00-18:00, `unoccupied_lb` otherwise, no upper bound.
inline ComfortSchedule heating_schedule(double occupied_lb, double unoccupied_lb, double dt_minutes = 15.0) {
  const double inf = std::numeric_limits<double>::infinity();
  ScheduleRule occ{kWeekdays, 8 * 60, 18 * 60, {VectorXd::Constant(1, occupied_lb), VectorXd::Constant(1, inf)}};
  return ComfortSchedule({occ}, ComfortBand{VectorXd::Constant(1, unoccupied_lb), VectorXd::Constant(1, inf)},
                         dt_minutes);
}

}  // namespace dadpc
