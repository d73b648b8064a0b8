#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <string>
#include <vector>

#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/predictor.hpp"
#include "dadpc/trajdata.hpp"

namespace dadpc {

/// Calibration with fewer anchors than this is rejected.
inline constexpr std::size_t kMinCalibrationAnchors = 20;

/// Per-step, per-output sorted residuals defining the box half-widths.
///
/// Each cell keeps its residuals sorted for quantile lookup and, separately,
/// in insertion order so the oldest entry can be evicted once `window_cap`
/// is reached.
class QuantileTable {
 public:
  QuantileTable() = default;
  QuantileTable(Index horizon, Index n_y, std::size_t n_cal, std::size_t window_cap)
      : horizon_(horizon), n_y_(n_y), n_cal_(n_cal), window_cap_(window_cap),
        sorted_(static_cast<std::size_t>(horizon * n_y)), fifo_(static_cast<std::size_t>(horizon * n_y)) {
    require(horizon > 0 && n_y > 0, ErrorCode::DimensionMismatch, "quantile table needs positive dimensions");
    require(n_cal > 0 && window_cap > 0, ErrorCode::InsufficientData, "n_cal and window_cap must be positive");
  }

  [[nodiscard]] Index horizon() const { return horizon_; }
  [[nodiscard]] Index n_y() const { return n_y_; }
  [[nodiscard]] std::size_t n_cal() const { return n_cal_; }
  [[nodiscard]] std::size_t window_cap() const { return window_cap_; }
  void set_window_cap(std::size_t cap) {
    require(cap > 0, ErrorCode::InsufficientData, "window_cap must be positive");
    window_cap_ = cap;
    for (std::size_t c = 0; c < fifo_.size(); ++c)
      while (fifo_[c].size() > window_cap_) evict_oldest(c);
  }

  [[nodiscard]] const std::vector<double>& residuals(Index i, Index j) const { return sorted_[cell(i, j)]; }

  void push(Index i, Index j, double r) {
    require(std::isfinite(r) && r >= 0.0, ErrorCode::NonFiniteResidual,
            "residual must be finite and nonnegative (got " + csv::format(r) + ")");
    const std::size_t c = cell(i, j);
    auto& s = sorted_[c];
    s.insert(std::upper_bound(s.begin(), s.end(), r), r);
    fifo_[c].push_back(r);
    while (fifo_[c].size() > window_cap_) evict_oldest(c);
  }

  void write_csv(std::ostream& out) const {
    out << "i,j,residuals\n";
    for (Index i = 0; i < horizon_; ++i)
      for (Index j = 0; j < n_y_; ++j) {
        out << i << ',' << j;
        for (double r : residuals(i, j)) out << ',' << csv::format(r);
        out << '\n';
      }
  }

  void save_csv(const std::string& path) const {
    auto out = csv::open_out(path);
    write_csv(out);
  }

 private:
  [[nodiscard]] std::size_t cell(Index i, Index j) const {
    require(i >= 0 && i < horizon_ && j >= 0 && j < n_y_, ErrorCode::DimensionMismatch,
            "quantile table index out of range");
    return static_cast<std::size_t>(i * n_y_ + j);
  }

  void evict_oldest(std::size_t c) {
    const double old = fifo_[c].front();
    fifo_[c].pop_front();
    auto& s = sorted_[c];
    s.erase(std::lower_bound(s.begin(), s.end(), old));
  }

  Index horizon_ = 0;
  Index n_y_ = 0;
  std::size_t n_cal_ = 0;
  std::size_t window_cap_ = 0;
  std::vector<std::vector<double>> sorted_;
  std::vector<std::deque<double>> fifo_;
};

inline void push_residual(QuantileTable& tab, Index i, Index j, double r) { tab.push(i, j, r); }

/// Rank of the conformal quantile, ceil(n_cal (1 - sigma)), guarded against
/// round-off pushing an exact integer product up by one.
inline std::size_t quantile_rank(std::size_t n_cal, double sigma) {
  const double x = static_cast<double>(n_cal) * (1.0 - sigma);
  const double k = std::ceil(x - 1e-9 * std::max(1.0, x));
  return k <= 0.0 ? 0 : static_cast<std::size_t>(k);
}

/// Half-width of the box D_i(sigma) for output j at prediction step i.
/// sigma = 1 is the nominal case with a zero box.
inline double half_width(const QuantileTable& tab, Index i, Index j, double sigma) {
  require(sigma >= 0.0 && sigma <= 1.0, ErrorCode::SigmaOutOfRange, "sigma must lie in [0, 1]");
  const auto& r = tab.residuals(i, j);
  require(!r.empty(), ErrorCode::EmptyTable, "no residuals at step " + std::to_string(i));
  if (sigma >= 1.0) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, quantile_rank(tab.n_cal(), sigma));
  return k > r.size() ? r.back() : r[k - 1];
}

/// Absolute prediction residuals |y - y_hat| of the horizon starting at record
/// `anchor`, using the recorded inputs over the horizon. Entry i * n_y + j.
inline VectorXd horizon_residuals(const TrajectoryStore& store, const AffinePredictor& p, std::size_t anchor) {
  const Dims& d = store.dims();
  const Index N = p.horizon;
  require(anchor + static_cast<std::size_t>(N) <= store.size(), ErrorCode::InsufficientData,
          "horizon extends past the stored records");
  const VectorXd z = make_z(store, anchor, p.t_init);
  VectorXd u(N * d.n_u), w(N * d.n_w), y(N * d.n_y);
  for (Index i = 0; i < N; ++i) {
    const Record& r = store[anchor + static_cast<std::size_t>(i)];
    u.segment(i * d.n_u, d.n_u) = r.u;
    w.segment(i * d.n_w, d.n_w) = r.w;
    y.segment(i * d.n_y, d.n_y) = r.y;
  }
  return (y - p.predict(z, u, w)).cwiseAbs();
}

/// Split conformal calibration over every anchor whose initial window and
/// horizon lie inside one segment of `store`.
inline QuantileTable calibrate(const TrajectoryStore& store, const AffinePredictor& p, std::size_t window_cap = 0) {
  require(store.dims() == p.dims, ErrorCode::DimensionMismatch, "store and predictor dimensions differ");
  const auto t_init = static_cast<std::size_t>(p.t_init);
  const auto N = static_cast<std::size_t>(p.horizon);
  std::vector<std::size_t> anchors;
  for (const auto& s : store.segments())
    for (std::size_t a = s.begin + t_init; a + N <= s.end; ++a) anchors.push_back(a);
  require(anchors.size() >= kMinCalibrationAnchors, ErrorCode::InsufficientData,
          "calibration needs at least " + std::to_string(kMinCalibrationAnchors) + " anchors, got " +
              std::to_string(anchors.size()));

  QuantileTable tab(p.horizon, p.dims.n_y, anchors.size(), window_cap ? window_cap : anchors.size());
  for (std::size_t a : anchors) {
    const VectorXd r = horizon_residuals(store, p, a);
    for (Index i = 0; i < p.horizon; ++i)
      for (Index j = 0; j < p.dims.n_y; ++j) tab.push(i, j, r[i * p.dims.n_y + j]);
  }
  return tab;
}

}  // namespace dadpc
