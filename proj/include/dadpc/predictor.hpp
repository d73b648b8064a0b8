#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "dadpc/errors.hpp"
#include "dadpc/trajdata.hpp"

namespace dadpc {

/// Affine multi-step output predictor obtained by solving the regularized
/// inner least-squares problem in closed form:
///
///   y_pred = Phi_z * z + Phi_u * u_pred + Phi_w * w_pred
///
/// with z = [y_init; u_init; w_init], each block stacked oldest sample first.
struct AffinePredictor {
  MatrixXd Phi_z;
  MatrixXd Phi_u;
  MatrixXd Phi_w;
  VectorXd Q_g;
  Index t_init = 0;
  Index horizon = 0;
  Dims dims;
  std::uint64_t bundle_stamp = 0;
  bool ridge_applied = false;

  [[nodiscard]] Index z_size() const { return t_init * (dims.n_y + dims.n_u + dims.n_w); }

  [[nodiscard]] VectorXd predict(const VectorXd& z, const VectorXd& u_pred, const VectorXd& w_pred) const {
    require(z.size() == Phi_z.cols() && u_pred.size() == Phi_u.cols() && w_pred.size() == Phi_w.cols(),
            ErrorCode::DimensionMismatch, "predictor argument sizes do not match");
    return Phi_z * z + Phi_u * u_pred + Phi_w * w_pred;
  }
};

/// FNV-1a over the bundle contents; identifies which data a predictor came from.
inline std::uint64_t bundle_stamp(const HankelBundle& b) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const MatrixXd& m) {
    const auto* p = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(b.H_u);
  mix(b.H_y);
  mix(b.H_w);
  return h;
}

/// Initial-condition vector z from records [anchor - t_init, anchor).
inline VectorXd make_z(const TrajectoryStore& store, std::size_t anchor, Index t_init) {
  require(anchor >= static_cast<std::size_t>(t_init) && anchor <= store.size(), ErrorCode::InsufficientData,
          "not enough records before the anchor to form z");
  const Dims& d = store.dims();
  VectorXd z(t_init * (d.n_y + d.n_u + d.n_w));
  const std::size_t first = anchor - static_cast<std::size_t>(t_init);
  for (Index k = 0; k < t_init; ++k) {
    const Record& r = store[first + static_cast<std::size_t>(k)];
    z.segment(k * d.n_y, d.n_y) = r.y;
    z.segment(t_init * d.n_y + k * d.n_u, d.n_u) = r.u;
    z.segment(t_init * (d.n_y + d.n_u) + k * d.n_w, d.n_w) = r.w;
  }
  return z;
}

namespace detail {

inline VectorXd expand_qg(const VectorXd& Q_g, Index n) {
  if (Q_g.size() == 1) return VectorXd::Constant(n, Q_g[0]);
  require(Q_g.size() == n, ErrorCode::DimensionMismatch, "Q_g must be a scalar or have one entry per Hankel column");
  return Q_g;
}

inline MatrixXd equality_rows(const HankelBundle& b) {
  const Index n_g = b.column_count();
  MatrixXd E(b.u_init().rows() + b.w_init().rows() + b.u_pred().rows() + b.w_pred().rows(), n_g);
  E << b.u_init(), b.w_init(), b.u_pred(), b.w_pred();
  return E;
}

}  // namespace detail

inline constexpr double kPredictorRidge = 1e-10;
inline constexpr double kSingularRcond = 1e-13;

/// Collapses the inner problem
///   min_g 1/2 |H_y,init g - y_init|^2 + 1/2 g' Q_g g
///   s.t.  [H_u,init; H_w,init; H_u,pred; H_w,pred] g = [u_init; w_init; u_pred; w_pred]
/// into the affine predictor. The KKT matrix is factored once; since it is
/// symmetric, the output map H_y,pred * g is recovered by one adjoint solve
/// with H_y,pred' as right-hand side instead of one solve per input basis vector.
inline AffinePredictor assemble(const HankelBundle& b, const VectorXd& Q_g_in) {
  const Dims& d = b.dims;
  require(b.H_u.rows() == b.depth() * d.n_u && b.H_y.rows() == b.depth() * d.n_y &&
              b.H_w.rows() == b.depth() * d.n_w,
          ErrorCode::DimensionMismatch, "bundle depth differs from t_init + N");
  require(b.H_u.cols() == b.H_y.cols() && b.H_u.cols() == b.H_w.cols(), ErrorCode::DimensionMismatch,
          "bundle matrices have different column counts");
  const Index n_g = b.column_count();
  const VectorXd Q_g = detail::expand_qg(Q_g_in, n_g);
  require((Q_g.array() >= 0.0).all(), ErrorCode::DimensionMismatch, "Q_g must be nonnegative");

  const MatrixXd E = detail::equality_rows(b);
  const Index m_e = E.rows();
  const Index n_kkt = n_g + m_e;

  MatrixXd K = MatrixXd::Zero(n_kkt, n_kkt);
  K.topLeftCorner(n_g, n_g).noalias() = b.y_init().transpose() * b.y_init();
  K.topLeftCorner(n_g, n_g).diagonal() += Q_g;
  K.topRightCorner(n_g, m_e) = E.transpose();
  K.bottomLeftCorner(m_e, n_g) = E;

  Eigen::PartialPivLU<MatrixXd> lu(K);
  double rcond = lu.rcond();
  bool ridge = false;
  if (!(rcond > kSingularRcond) && (Q_g.array() == 0.0).all()) {
    K.topLeftCorner(n_g, n_g).diagonal().array() += kPredictorRidge;
    lu.compute(K);
    rcond = lu.rcond();
    ridge = true;
    warn("predictor KKT singular with Q_g = 0; added ridge 1e-10 to the g-block");
  }
  if (!(rcond > 1e-20) || !std::isfinite(rcond)) {
    throw Error(ErrorCode::SingularKKT,
                "predictor KKT factorization failed (rcond estimate " + std::to_string(rcond) + ")");
  }
  if (!(rcond > kSingularRcond)) {
    warn("predictor KKT is ill-conditioned (rcond estimate " + std::to_string(rcond) + ")");
  }

  const Index n_out = b.horizon * d.n_y;
  MatrixXd rhs = MatrixXd::Zero(n_kkt, n_out);
  rhs.topRows(n_g) = b.y_pred().transpose();
  MatrixXd X = lu.solve(rhs);
  // One step of iterative refinement.
  X += lu.solve(rhs - K * X);
  require(X.allFinite(), ErrorCode::SingularKKT, "predictor KKT solve produced non-finite values");

  AffinePredictor p;
  p.t_init = b.t_init;
  p.horizon = b.horizon;
  p.dims = d;
  p.Q_g = Q_g_in;
  p.ridge_applied = ridge;
  p.bundle_stamp = bundle_stamp(b);

  const MatrixXd Phi_yinit = (b.y_init() * X.topRows(n_g)).transpose();
  const MatrixXd Phi_e = X.bottomRows(m_e).transpose();
  const Index nui = b.t_init * d.n_u, nwi = b.t_init * d.n_w;
  const Index nup = b.horizon * d.n_u, nwp = b.horizon * d.n_w;

  p.Phi_z.resize(n_out, p.z_size());
  p.Phi_z << Phi_yinit, Phi_e.leftCols(nui), Phi_e.middleCols(nui, nwi);
  p.Phi_u = Phi_e.middleCols(nui + nwi, nup);
  p.Phi_w = Phi_e.middleCols(nui + nwi + nup, nwp);
  return p;
}

inline AffinePredictor assemble(const HankelBundle& b, double Q_g) {
  return assemble(b, VectorXd::Constant(1, Q_g));
}

/// Minimizer of the inner problem for one specific right-hand side.
struct InnerSolution {
  VectorXd g;
  VectorXd delta_y;
  VectorXd y_pred;
  double objective = 0.0;
};

/// Solves the inner problem directly over (g, delta_y) through its full KKT
/// system. Independent of `assemble`; used to cross-check it.
inline InnerSolution solve_inner_direct(const HankelBundle& b, const VectorXd& Q_g_in, const VectorXd& z,
                                        const VectorXd& u_pred, const VectorXd& w_pred) {
  const Dims& d = b.dims;
  const Index n_g = b.column_count();
  const Index ny_i = b.t_init * d.n_y;
  const Index nu_i = b.t_init * d.n_u;
  const Index nw_i = b.t_init * d.n_w;
  require(z.size() == ny_i + nu_i + nw_i && u_pred.size() == b.horizon * d.n_u && w_pred.size() == b.horizon * d.n_w,
          ErrorCode::DimensionMismatch, "inner problem argument sizes do not match the bundle");
  const VectorXd Q_g = detail::expand_qg(Q_g_in, n_g);
  const MatrixXd E = detail::equality_rows(b);
  const Index m_e = E.rows();

  // Unknowns: [g; delta_y; mu (y_init rows); lambda (E rows)].
  const Index n = n_g + ny_i + ny_i + m_e;
  MatrixXd K = MatrixXd::Zero(n, n);
  VectorXd r = VectorXd::Zero(n);
  const Index og = 0, od = n_g, om = n_g + ny_i, ol = n_g + 2 * ny_i;
  K.block(og, og, n_g, n_g).diagonal() = Q_g;
  K.block(od, od, ny_i, ny_i).setIdentity();
  K.block(og, om, n_g, ny_i) = b.y_init().transpose();
  K.block(od, om, ny_i, ny_i) = -MatrixXd::Identity(ny_i, ny_i);
  K.block(og, ol, n_g, m_e) = E.transpose();
  K.block(om, og, ny_i, n_g) = b.y_init();
  K.block(om, od, ny_i, ny_i) = -MatrixXd::Identity(ny_i, ny_i);
  K.block(ol, og, m_e, n_g) = E;

  VectorXd e(m_e);
  e << z.segment(ny_i, nu_i), z.segment(ny_i + nu_i, nw_i), u_pred, w_pred;
  r.segment(om, ny_i) = z.head(ny_i);
  r.segment(ol, m_e) = e;

  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(K);
  VectorXd sol = cod.solve(r);
  const double res = (K * sol - r).norm();
  if (!sol.allFinite() || res > 1e-6 * (1.0 + r.norm())) {
    throw Error(ErrorCode::SingularKKT, "inner KKT system is inconsistent (residual " + std::to_string(res) + ")");
  }

  InnerSolution out;
  out.g = sol.segment(og, n_g);
  out.delta_y = sol.segment(od, ny_i);
  out.y_pred = b.y_pred() * out.g;
  out.objective = 0.5 * out.delta_y.squaredNorm() + 0.5 * out.g.dot(Q_g.cwiseProduct(out.g));
  return out;
}

inline InnerSolution solve_inner_direct(const HankelBundle& b, double Q_g, const VectorXd& z, const VectorXd& u_pred,
                                        const VectorXd& w_pred) {
  return solve_inner_direct(b, VectorXd::Constant(1, Q_g), z, u_pred, w_pred);
}

// Binary dump: 16-byte header (magic "DPCP", u16 version, u16 n_y, n_u, n_w,
// t_init, N) followed by Phi_z, Phi_u, Phi_w as little-endian row-major f64.
namespace detail {

inline constexpr std::array<char, 4> kPhiMagic{'D', 'P', 'C', 'P'};

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  require(static_cast<bool>(in), ErrorCode::IoError, "truncated predictor dump");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_predictor(const AffinePredictor& p, const std::string& path) {
  auto out = csv::open_out(path);
  out.write(detail::kPhiMagic.data(), 4);
  detail::write_le<std::uint16_t>(out, 1);
  for (Index v : {p.dims.n_y, p.dims.n_u, p.dims.n_w, p.t_init, p.horizon}) {
    require(v >= 0 && v <= 0xFFFF, ErrorCode::DimensionMismatch, "predictor dimension does not fit the dump header");
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(v));
  }
  for (const MatrixXd* m : {&p.Phi_z, &p.Phi_u, &p.Phi_w})
    for (Index i = 0; i < m->rows(); ++i)
      for (Index j = 0; j < m->cols(); ++j) detail::write_le<double>(out, (*m)(i, j));
}

inline AffinePredictor load_predictor(const std::string& path) {
  auto in = csv::open_in(path);
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  require(static_cast<bool>(in) && magic == detail::kPhiMagic, ErrorCode::IoError, "not a predictor dump: " + path);
  require(detail::read_le<std::uint16_t>(in) == 1, ErrorCode::IoError, "unsupported predictor dump version");
  AffinePredictor p;
  p.dims.n_y = detail::read_le<std::uint16_t>(in);
  p.dims.n_u = detail::read_le<std::uint16_t>(in);
  p.dims.n_w = detail::read_le<std::uint16_t>(in);
  p.t_init = detail::read_le<std::uint16_t>(in);
  p.horizon = detail::read_le<std::uint16_t>(in);
  const Index rows = p.horizon * p.dims.n_y;
  p.Phi_z.resize(rows, p.z_size());
  p.Phi_u.resize(rows, p.horizon * p.dims.n_u);
  p.Phi_w.resize(rows, p.horizon * p.dims.n_w);
  for (MatrixXd* m : {&p.Phi_z, &p.Phi_u, &p.Phi_w})
    for (Index i = 0; i < m->rows(); ++i)
      for (Index j = 0; j < m->cols(); ++j) (*m)(i, j) = detail::read_le<double>(in);
  return p;
}

}  // namespace dadpc
