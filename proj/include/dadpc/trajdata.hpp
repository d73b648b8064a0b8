#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"

namespace dadpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Signal dimensions of a trajectory: inputs, outputs, external inputs.
struct Dims {
  Index n_u = 1;
  Index n_y = 1;
  Index n_w = 1;

  friend bool operator==(const Dims&, const Dims&) = default;
};

/// One sampling interval of recorded data.
///
/// `u` and `w` are the input and external input applied during step `step`;
/// `y` is the output observed at the end of that interval. With this
/// alignment a Hankel column pairs each input with the output it influences,
/// which is what the predictor's init/pred split relies on.
struct Record {
  std::int64_t step = 0;
  int seg = 0;
  VectorXd u;
  VectorXd y;
  VectorXd w;
};

/// Half-open index range [begin, end) into a store's records.
struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t length() const { return end - begin; }
};

/// Time-indexed I/O records with segment boundaries.
///
/// A segment is a maximal run of adjacent records sharing a segment id.
/// When `capacity` is non-zero the store behaves as a ring buffer and
/// evicts the oldest record on overflow.
class TrajectoryStore {
 public:
  explicit TrajectoryStore(Dims dims, std::size_t capacity = 0) : dims_(dims), capacity_(capacity) {
    require(dims.n_u > 0 && dims.n_y > 0 && dims.n_w > 0, ErrorCode::DimensionMismatch,
            "trajectory dimensions must be positive");
  }

  void append(Record r) {
    require(r.u.size() == dims_.n_u && r.y.size() == dims_.n_y && r.w.size() == dims_.n_w,
            ErrorCode::DimensionMismatch, "record dimensions differ from the store's");
    require(r.u.allFinite() && r.y.allFinite() && r.w.allFinite(), ErrorCode::InvalidRecord,
            "record at step " + std::to_string(r.step) + " has non-finite entries");
    if (!records_.empty() && records_.back().seg == r.seg) {
      require(r.step > records_.back().step, ErrorCode::InvalidRecord,
              "steps must strictly increase within a segment (step " + std::to_string(r.step) + ")");
    }
    records_.push_back(std::move(r));
    if (capacity_ > 0 && records_.size() > capacity_) records_.pop_front();
  }

  void append(std::int64_t step, int seg, VectorXd u, VectorXd y, VectorXd w) {
    append(Record{step, seg, std::move(u), std::move(y), std::move(w)});
  }

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] const Record& operator[](std::size_t i) const { return records_[i]; }
  [[nodiscard]] const Record& back() const { return records_.back(); }
  [[nodiscard]] const std::deque<Record>& records() const { return records_; }

  /// Copy of the most recent `n` records (all of them if fewer exist).
  [[nodiscard]] TrajectoryStore tail(std::size_t n) const {
    TrajectoryStore out(dims_);
    std::size_t start = records_.size() > n ? records_.size() - n : 0;
    for (std::size_t i = start; i < records_.size(); ++i) out.records_.push_back(records_[i]);
    return out;
  }

  [[nodiscard]] std::vector<SegmentRange> segments() const {
    std::vector<SegmentRange> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (i == 0 || records_[i].seg != records_[i - 1].seg) out.push_back({i, i});
      out.back().end = i + 1;
    }
    return out;
  }

  /// Signals over [begin, end) as dim x length matrices, one column per step.
  [[nodiscard]] MatrixXd u_block(std::size_t begin, std::size_t end) const {
    return gather(begin, end, dims_.n_u, &Record::u);
  }
  [[nodiscard]] MatrixXd y_block(std::size_t begin, std::size_t end) const {
    return gather(begin, end, dims_.n_y, &Record::y);
  }
  [[nodiscard]] MatrixXd w_block(std::size_t begin, std::size_t end) const {
    return gather(begin, end, dims_.n_w, &Record::w);
  }

  void write_csv(std::ostream& out) const {
    out << "step,seg";
    for (Index i = 0; i < dims_.n_u; ++i) out << ",u" << i;
    for (Index i = 0; i < dims_.n_y; ++i) out << ",y" << i;
    for (Index i = 0; i < dims_.n_w; ++i) out << ",w" << i;
    out << '\n';
    for (const auto& r : records_) {
      out << r.step << ',' << r.seg;
      for (Index i = 0; i < dims_.n_u; ++i) out << ',' << csv::format(r.u[i]);
      for (Index i = 0; i < dims_.n_y; ++i) out << ',' << csv::format(r.y[i]);
      for (Index i = 0; i < dims_.n_w; ++i) out << ',' << csv::format(r.w[i]);
      out << '\n';
    }
  }

  void save_csv(const std::string& path) const {
    auto out = csv::open_out(path);
    write_csv(out);
  }

  /// Reads a store written by write_csv; dimensions are taken from the header.
  static TrajectoryStore read_csv(std::istream& in, std::size_t capacity = 0) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::IoError, "empty trajectory CSV");
    auto header = csv::split(csv::trim(line));
    require(header.size() >= 5 && header[0] == "step" && header[1] == "seg", ErrorCode::IoError,
            "trajectory CSV header must start with 'step,seg'");
    Dims d{0, 0, 0};
    for (std::size_t i = 2; i < header.size(); ++i) {
      auto h = csv::trim(header[i]);
      require(!h.empty(), ErrorCode::IoError, "empty column name in trajectory CSV");
      Index& slot = h[0] == 'u' ? d.n_u : h[0] == 'y' ? d.n_y : h[0] == 'w' ? d.n_w : d.n_u;
      require(h[0] == 'u' || h[0] == 'y' || h[0] == 'w', ErrorCode::IoError,
              "unexpected column '" + std::string(h) + "'");
      require(h.substr(1) == std::to_string(slot), ErrorCode::IoError,
              "columns must be ordered u0..,y0..,w0..");
      ++slot;
    }
    TrajectoryStore store(d, capacity);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      auto t = csv::trim(line);
      if (t.empty()) continue;
      auto f = csv::split(t);
      require(f.size() == header.size(), ErrorCode::IoError,
              "wrong field count on line " + std::to_string(lineno));
      Record r;
      r.step = csv::parse_int(f[0]);
      r.seg = static_cast<int>(csv::parse_int(f[1]));
      r.u.resize(d.n_u);
      r.y.resize(d.n_y);
      r.w.resize(d.n_w);
      std::size_t k = 2;
      for (Index i = 0; i < d.n_u; ++i) r.u[i] = csv::parse_double(f[k++]);
      for (Index i = 0; i < d.n_y; ++i) r.y[i] = csv::parse_double(f[k++]);
      for (Index i = 0; i < d.n_w; ++i) r.w[i] = csv::parse_double(f[k++]);
      store.append(std::move(r));
    }
    return store;
  }

  static TrajectoryStore load_csv(const std::string& path, std::size_t capacity = 0) {
    auto in = csv::open_in(path);
    return read_csv(in, capacity);
  }

 private:
  MatrixXd gather(std::size_t begin, std::size_t end, Index dim, VectorXd Record::*field) const {
    require(begin <= end && end <= records_.size(), ErrorCode::DimensionMismatch, "record range out of bounds");
    MatrixXd m(dim, static_cast<Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) m.col(static_cast<Index>(i - begin)) = records_[i].*field;
    return m;
  }

  Dims dims_;
  std::size_t capacity_ = 0;
  std::deque<Record> records_;
};

/// Block-Hankel matrix of depth `depth` from a dim x T signal (one column per step).
/// Block (i, j) holds seq.col(i + j).
template <typename Derived>
MatrixXd build_hankel(const Eigen::MatrixBase<Derived>& seq, Index depth) {
  require(depth > 0, ErrorCode::SequenceTooShort, "Hankel depth must be positive");
  const Index dim = seq.rows();
  const Index len = seq.cols();
  require(len >= depth, ErrorCode::SequenceTooShort,
          "sequence of length " + std::to_string(len) + " is shorter than depth " + std::to_string(depth));
  const Index cols = len - depth + 1;
  MatrixXd h(depth * dim, cols);
  for (Index i = 0; i < depth; ++i) h.middleRows(i * dim, dim) = seq.middleCols(i, cols);
  return h;
}

/// Hankel matrices of u, y, w with matching columns, split into init and pred rows.
struct HankelBundle {
  MatrixXd H_u, H_y, H_w;
  Index t_init = 0;
  Index horizon = 0;
  Dims dims;

  [[nodiscard]] Index depth() const { return t_init + horizon; }
  [[nodiscard]] Index column_count() const { return H_u.cols(); }

  [[nodiscard]] auto u_init() const { return H_u.topRows(t_init * dims.n_u); }
  [[nodiscard]] auto y_init() const { return H_y.topRows(t_init * dims.n_y); }
  [[nodiscard]] auto w_init() const { return H_w.topRows(t_init * dims.n_w); }
  [[nodiscard]] auto u_pred() const { return H_u.bottomRows(horizon * dims.n_u); }
  [[nodiscard]] auto y_pred() const { return H_y.bottomRows(horizon * dims.n_y); }
  [[nodiscard]] auto w_pred() const { return H_w.bottomRows(horizon * dims.n_w); }
};

/// Concatenates per-segment Hankel matrices; segments shorter than t_init + N are skipped.
inline HankelBundle build_mosaic(const TrajectoryStore& store, Index t_init, Index horizon) {
  require(t_init > 0 && horizon > 0, ErrorCode::DimensionMismatch, "t_init and N must be positive");
  const Index depth = t_init + horizon;
  const Dims& d = store.dims();

  std::vector<SegmentRange> usable;
  Index cols = 0;
  for (const auto& s : store.segments()) {
    if (static_cast<Index>(s.length()) >= depth) {
      usable.push_back(s);
      cols += static_cast<Index>(s.length()) - depth + 1;
    }
  }
  require(!usable.empty(), ErrorCode::NoUsableSegment,
          "no segment reaches the Hankel depth " + std::to_string(depth));

  HankelBundle b;
  b.t_init = t_init;
  b.horizon = horizon;
  b.dims = d;
  b.H_u.resize(depth * d.n_u, cols);
  b.H_y.resize(depth * d.n_y, cols);
  b.H_w.resize(depth * d.n_w, cols);
  Index c = 0;
  for (const auto& s : usable) {
    const Index k = static_cast<Index>(s.length()) - depth + 1;
    b.H_u.middleCols(c, k) = build_hankel(store.u_block(s.begin, s.end), depth);
    b.H_y.middleCols(c, k) = build_hankel(store.y_block(s.begin, s.end), depth);
    b.H_w.middleCols(c, k) = build_hankel(store.w_block(s.begin, s.end), depth);
    c += k;
  }
  return b;
}

/// Outcome of a persistency-of-excitation test.
struct PeReport {
  bool persistently_exciting = false;
  Index rank = 0;
  Index rows = 0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;
};

/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankTolerance = 1e-9;

template <typename Derived>
PeReport is_persistently_exciting(const Eigen::MatrixBase<Derived>& u_seq, Index order) {
  const MatrixXd h = build_hankel(u_seq, order);
  PeReport rep;
  rep.rows = h.rows();
  Eigen::BDCSVD<MatrixXd> svd(h);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0) return rep;
  rep.sigma_max = s[0];
  rep.sigma_min = s[s.size() - 1];
  const double thresh = kRankTolerance * rep.sigma_max;
  for (Index i = 0; i < s.size(); ++i)
    if (s[i] > thresh) ++rep.rank;
  rep.persistently_exciting = rep.sigma_max > 0.0 && rep.rank == h.rows();
  return rep;
}

}  // namespace dadpc
