#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "dadpc/conformal.hpp"
#include "test_support.hpp"

using namespace dadpc;
using namespace dadpc::testing;

namespace {

QuantileTable filled(const std::vector<double>& values, std::size_t n_cal, std::size_t cap = 0) {
  QuantileTable t(1, 1, n_cal, cap ? cap : std::max<std::size_t>(values.size(), 1));
  for (double v : values) t.push(0, 0, v);
  return t;
}

struct Calibrated {
  Lti sys;
  TrajectoryStore train{Dims{1, 1, 1}};
  TrajectoryStore calib{Dims{1, 1, 1}};
  AffinePredictor p;
};

Calibrated calibrated_lti(std::uint64_t seed, double noise, Index t_init, Index N, Index T, Index T_c) {
  std::mt19937_64 rng(seed);
  Calibrated c;
  c.sys = random_lti(rng, 2);
  const MatrixXd u = gaussian_matrix(rng, 1, T + T_c), w = gaussian_matrix(rng, 1, T + T_c);
  const auto run = simulate_lti(c.sys, VectorXd::Zero(2), u, w, noise, &rng);
  for (Index k = 0; k < T + T_c; ++k)
    (k < T ? c.train : c.calib).append(k, 0, u.col(k), run.y.col(k), w.col(k));
  QuietWarnings quiet;
  c.p = assemble(build_mosaic(c.train, t_init, N), noise > 0.0 ? 0.01 : 0.0);
  return c;
}

}  // namespace

TEST(HalfWidth, TenResidualsSigmaPointTwo) {
  const auto t = filled({0.5, 0.1, 0.9, 0.3, 1.0, 0.2, 0.4, 0.7, 0.6, 0.8}, 10);
  EXPECT_DOUBLE_EQ(half_width(t, 0, 0, 0.2), 0.8);
}

TEST(HalfWidth, SigmaOneIsZeroAndSigmaZeroIsMax) {
  const auto t = filled({0.1, 0.2, 0.3, 0.4}, 4);
  EXPECT_EQ(half_width(t, 0, 0, 1.0), 0.0);
  EXPECT_EQ(half_width(t, 0, 0, 0.0), 0.4);
}

TEST(HalfWidth, RankPastWindowReturnsMaximum) {
  // n_cal = 10 but only four residuals remain.
  const auto t = filled({0.1, 0.2, 0.3, 0.4}, 10);
  EXPECT_EQ(half_width(t, 0, 0, 0.2), 0.4);
}

TEST(HalfWidth, RankIsRobustToRoundOff) {
  // 10 * (1 - 0.7) evaluates slightly above 3 in floating point.
  EXPECT_EQ(quantile_rank(10, 0.7), 3u);
  EXPECT_EQ(quantile_rank(500, 0.05), 475u);
  EXPECT_EQ(quantile_rank(565, 0.05), 537u);
  EXPECT_EQ(quantile_rank(7, 1.0), 0u);
}

TEST(HalfWidth, Errors) {
  const auto t = filled({0.1}, 1);
  EXPECT_EQ(error_code_of([&] { (void)half_width(t, 0, 0, -0.1); }), ErrorCode::SigmaOutOfRange);
  EXPECT_EQ(error_code_of([&] { (void)half_width(t, 0, 0, 1.5); }), ErrorCode::SigmaOutOfRange);
  QuantileTable empty(1, 1, 5, 5);
  EXPECT_EQ(error_code_of([&] { (void)half_width(empty, 0, 0, 0.5); }), ErrorCode::EmptyTable);
}

TEST(HalfWidth, NonIncreasingInSigma) {
  std::mt19937_64 rng(31);
  std::exponential_distribution<double> ex(2.0);
  QuantileTable t(5, 2, 200, 200);
  for (int k = 0; k < 200; ++k)
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 2; ++j) t.push(i, j, ex(rng) * static_cast<double>(i + 1));
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 2; ++j) {
      double prev = std::numeric_limits<double>::infinity();
      for (int g = 0; g <= 10; ++g) {
        const double hw = half_width(t, i, j, 0.1 * g);
        EXPECT_LE(hw, prev);
        prev = hw;
      }
      EXPECT_EQ(half_width(t, i, j, 0.0), t.residuals(i, j).back());
    }
}

TEST(PushResidual, KeepsSortedOrder) {
  auto t = filled({0.1, 0.3}, 3, 3);
  push_residual(t, 0, 0, 0.25);
  EXPECT_EQ(t.residuals(0, 0), (std::vector<double>{0.1, 0.25, 0.3}));
}

TEST(PushResidual, EvictsOldestInserted) {
  QuantileTable t(1, 1, 2, 2);
  t.push(0, 0, 0.9);
  t.push(0, 0, 0.1);
  t.push(0, 0, 0.5);
  // 0.9 was inserted first even though it sorts last.
  EXPECT_EQ(t.residuals(0, 0), (std::vector<double>{0.1, 0.5}));
}

TEST(PushResidual, DuplicatesEvictOneCopy) {
  QuantileTable t(1, 1, 3, 3);
  for (double v : {0.2, 0.2, 0.2, 0.4}) t.push(0, 0, v);
  EXPECT_EQ(t.residuals(0, 0), (std::vector<double>{0.2, 0.2, 0.4}));
}

TEST(PushResidual, ShrinkingWindowEvictsOldest) {
  auto t = filled({0.4, 0.3, 0.2, 0.1}, 4, 4);
  t.set_window_cap(2);
  EXPECT_EQ(t.residuals(0, 0), (std::vector<double>{0.1, 0.2}));
}

TEST(PushResidual, RejectsNonFiniteAndNegative) {
  QuantileTable t(1, 1, 2, 2);
  EXPECT_EQ(error_code_of([&] { t.push(0, 0, std::nan("")); }), ErrorCode::NonFiniteResidual);
  EXPECT_EQ(error_code_of([&] { t.push(0, 0, std::numeric_limits<double>::infinity()); }),
            ErrorCode::NonFiniteResidual);
  EXPECT_EQ(error_code_of([&] { t.push(0, 0, -0.1); }), ErrorCode::NonFiniteResidual);
}

TEST(PushResidual, UniformQuantileEstimate) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    QuantileTable t(1, 1, 500, 500);
    for (int k = 0; k < 500; ++k) t.push(0, 0, ud(rng));
    EXPECT_NEAR(half_width(t, 0, 0, 0.1), 0.9, 0.05) << "seed " << seed;
  }
}

TEST(Coverage, AverageOverCalibrationsMatchesNominalLevel) {
  // Split conformal: E[coverage] lies in [1 - sigma, 1 - sigma + 1/(n + 1)].
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd;
  const std::size_t n = 200;
  for (double sigma : {0.05, 0.2, 0.5}) {
    double cov = 0.0;
    const int reps = 200, fresh = 2000;
    for (int r = 0; r < reps; ++r) {
      QuantileTable t(1, 1, n, n);
      for (std::size_t k = 0; k < n; ++k) t.push(0, 0, std::abs(nd(rng)));
      const double hw = half_width(t, 0, 0, sigma);
      int hit = 0;
      for (int k = 0; k < fresh; ++k) hit += std::abs(nd(rng)) <= hw;
      cov += static_cast<double>(hit) / fresh;
    }
    cov /= reps;
    EXPECT_GE(cov, 1.0 - sigma - 0.01) << "sigma " << sigma;
    EXPECT_LE(cov, 1.0 - sigma + 1.0 / (n + 1) + 0.01) << "sigma " << sigma;
  }
}

TEST(Calibrate, ExactPredictorGivesVanishingResiduals) {
  const auto c = calibrated_lti(51, 0.0, 3, 8, 120, 80);
  const auto t = calibrate(c.calib, c.p);
  for (Index i = 0; i < 8; ++i) EXPECT_LE(t.residuals(i, 0).back(), 1e-6) << "step " << i;
}

TEST(Calibrate, AnchorCountForDefaultLengths) {
  // Every anchor needs t_init records before it and N records from it onward.
  const auto c = calibrated_lti(52, 0.05, 12, 96, 700, 672);
  const auto t = calibrate(c.calib, c.p);
  EXPECT_EQ(t.n_cal(), 672u - 12u - 96u + 1u);
  EXPECT_EQ(t.window_cap(), t.n_cal());
  EXPECT_EQ(t.residuals(0, 0).size(), t.n_cal());
  const auto capped = calibrate(c.calib, c.p, 100);
  EXPECT_EQ(capped.residuals(5, 0).size(), 100u);
}

TEST(Calibrate, ResidualsMatchDirectRecomputation) {
  const auto c = calibrated_lti(53, 0.1, 3, 5, 100, 60);
  const auto t = calibrate(c.calib, c.p);
  std::vector<double> step2;
  for (std::size_t a = 3; a + 5 <= c.calib.size(); ++a) {
    const VectorXd z = make_z(c.calib, a, 3);
    VectorXd u(5), w(5);
    for (Index i = 0; i < 5; ++i) {
      u[i] = c.calib[a + static_cast<std::size_t>(i)].u[0];
      w[i] = c.calib[a + static_cast<std::size_t>(i)].w[0];
    }
    step2.push_back(std::abs(c.calib[a + 2].y[0] - c.p.predict(z, u, w)[2]));
  }
  std::sort(step2.begin(), step2.end());
  EXPECT_EQ(t.residuals(2, 0), step2);
}

TEST(Calibrate, MeasurementNoiseSetsStepZeroResidualScale) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = calibrated_lti(60 + seed, 0.1, 4, 12, 400, 300);
    const auto t = calibrate(c.calib, c.p);
    const auto& r = t.residuals(0, 0);
    const double median = r[r.size() / 2];
    EXPECT_GE(median, 0.05) << "seed " << seed;
    EXPECT_LE(median, 0.15) << "seed " << seed;
  }
}

TEST(Calibrate, TooFewAnchors) {
  // 30 records give 30 - 3 - 8 + 1 = 20 anchors, the smallest accepted count.
  const auto ok = calibrated_lti(54, 0.0, 3, 8, 120, 30);
  EXPECT_EQ(calibrate(ok.calib, ok.p).n_cal(), kMinCalibrationAnchors);
  const auto few = calibrated_lti(54, 0.0, 3, 8, 120, 29);
  EXPECT_EQ(error_code_of([&] { (void)calibrate(few.calib, few.p); }), ErrorCode::InsufficientData);
}

TEST(QuantileTableCsv, OneRowPerCell) {
  QuantileTable t(2, 2, 3, 3);
  t.push(0, 1, 0.5);
  t.push(0, 1, 0.25);
  t.push(1, 0, 2.0);
  std::ostringstream out;
  t.write_csv(out);
  EXPECT_EQ(out.str(), "i,j,residuals\n0,0\n0,1,0.25,0.5\n1,0,2\n1,1\n");
}
