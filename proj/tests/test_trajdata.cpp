#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "dadpc/trajdata.hpp"

using namespace dadpc;

namespace {

TrajectoryStore scalar_store(const std::vector<std::pair<int, int>>& seg_lengths) {
  TrajectoryStore s(Dims{1, 1, 1});
  std::int64_t step = 0;
  double v = 0.0;
  for (auto [seg, len] : seg_lengths) {
    for (int k = 0; k < len; ++k) {
      s.append(step++, seg, VectorXd::Constant(1, v), VectorXd::Constant(1, 10.0 + v), VectorXd::Constant(1, -v));
      v += 1.0;
    }
    step += 5;
  }
  return s;
}

}  // namespace

TEST(BuildHankel, FiveSamplesDepthTwo) {
  Eigen::RowVectorXd seq(5);
  seq << 1, 2, 3, 4, 5;
  MatrixXd expected(2, 4);
  expected << 1, 2, 3, 4, 2, 3, 4, 5;
  EXPECT_EQ(build_hankel(seq, 2), expected);
}

TEST(BuildHankel, SingleSampleDepthOne) {
  Eigen::RowVectorXd seq(1);
  seq << 7;
  const MatrixXd h = build_hankel(seq, 1);
  ASSERT_EQ(h.rows(), 1);
  ASSERT_EQ(h.cols(), 1);
  EXPECT_EQ(h(0, 0), 7.0);
}

TEST(BuildHankel, StepResponseColumnsMatchSimulation) {
  // x+ = 0.5 x + u, y = x, x0 = 0, u = 1.
  std::vector<double> y;
  double x = 0.0;
  for (int k = 0; k < 10; ++k) {
    x = 0.5 * x + 1.0;
    y.push_back(x);
  }
  Eigen::RowVectorXd seq = Eigen::Map<Eigen::RowVectorXd>(y.data(), 10);
  const MatrixXd h = build_hankel(seq, 3);
  ASSERT_EQ(h.rows(), 3);
  ASSERT_EQ(h.cols(), 8);
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 3; ++i) EXPECT_EQ(h(i, j), y[static_cast<std::size_t>(i + j)]);
}

TEST(BuildHankel, TooShortThrows) {
  Eigen::RowVectorXd seq(3);
  seq << 1, 2, 3;
  try {
    (void)build_hankel(seq, 4);
    FAIL() << "expected SequenceTooShort";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SequenceTooShort);
  }
}

TEST(BuildHankel, FirstRowAndLastColumnRecoverSequence) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Index dim = 1 + trial % 3, len = 5 + trial, depth = 1 + trial % 5;
    MatrixXd seq(dim, len);
    for (Index i = 0; i < seq.size(); ++i) seq.data()[i] = nd(rng);
    const MatrixXd h = build_hankel(seq, depth);
    MatrixXd rebuilt(dim, len);
    const Index cols = h.cols();
    rebuilt.leftCols(cols) = h.topRows(dim);
    for (Index i = 1; i < depth; ++i) rebuilt.col(cols - 1 + i) = h.block(i * dim, cols - 1, dim, 1);
    EXPECT_EQ(rebuilt, seq);
  }
}

TEST(BuildMosaic, ColumnCountTwoSegments) {
  const auto s = scalar_store({{0, 5}, {1, 4}});
  const auto b = build_mosaic(s, 1, 2);
  EXPECT_EQ(b.column_count(), 5);
}

TEST(BuildMosaic, DefaultDataLengthGives565Columns) {
  const auto s = scalar_store({{0, 672}});
  const auto b = build_mosaic(s, 12, 96);
  EXPECT_EQ(b.column_count(), 565);
  EXPECT_EQ(b.H_u.rows(), 108);
  EXPECT_EQ(b.u_init().rows(), 12);
  EXPECT_EQ(b.y_pred().rows(), 96);
}

TEST(BuildMosaic, ShortSegmentContributesNothing) {
  const auto s = scalar_store({{0, 6}, {1, 2}, {2, 5}});
  const auto b = build_mosaic(s, 2, 1);
  EXPECT_EQ(b.column_count(), (6 - 3 + 1) + (5 - 3 + 1));
  // The short segment held u = 6, 7.
  for (Index j = 0; j < b.column_count(); ++j) {
    for (Index i = 0; i < 3; ++i) {
      EXPECT_NE(b.H_u(i, j), 6.0);
      EXPECT_NE(b.H_u(i, j), 7.0);
    }
  }
}

TEST(BuildMosaic, NoUsableSegment) {
  const auto s = scalar_store({{0, 3}, {1, 3}});
  try {
    (void)build_mosaic(s, 2, 2);
    FAIL() << "expected NoUsableSegment";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoUsableSegment);
  }
}

TEST(BuildMosaic, EveryColumnComesFromOneWindowOfOneSegment) {
  const auto s = scalar_store({{0, 9}, {1, 3}, {2, 7}});
  const auto b = build_mosaic(s, 2, 2);
  // u encodes the record index, y = 10 + u, w = -u; a column is a run of
  // consecutive indices inside one segment.
  for (Index j = 0; j < b.column_count(); ++j) {
    const double u0 = b.H_u(0, j);
    const auto& first = s[static_cast<std::size_t>(u0)];
    for (Index i = 0; i < b.depth(); ++i) {
      EXPECT_EQ(b.H_u(i, j), u0 + static_cast<double>(i));
      EXPECT_EQ(b.H_y(i, j), 10.0 + u0 + static_cast<double>(i));
      EXPECT_EQ(b.H_w(i, j), -(u0 + static_cast<double>(i)));
      EXPECT_EQ(s[static_cast<std::size_t>(u0) + static_cast<std::size_t>(i)].seg, first.seg);
    }
  }
}

TEST(PersistentExcitation, ConstantSequenceOrderTwo) {
  Eigen::RowVectorXd seq = Eigen::RowVectorXd::Ones(5);
  const auto rep = is_persistently_exciting(seq, 2);
  EXPECT_FALSE(rep.persistently_exciting);
  EXPECT_EQ(rep.rank, 1);
}

TEST(PersistentExcitation, GaussianSequencesOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::RowVectorXd seq(50);
    for (Index i = 0; i < 50; ++i) seq[i] = nd(rng);
    EXPECT_TRUE(is_persistently_exciting(seq, 10).persistently_exciting) << "seed " << seed;
  }
}

TEST(PersistentExcitation, OrderOneNonzero) {
  Eigen::RowVectorXd seq(4);
  seq << 0, 0, 3, 0;
  EXPECT_TRUE(is_persistently_exciting(seq, 1).persistently_exciting);
}

TEST(PersistentExcitation, MonotoneInOrder) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    // Short periodic sequences lose excitation at some order.
    const int period = 2 + trial % 5;
    Eigen::RowVectorXd seq(40);
    std::vector<double> base(static_cast<std::size_t>(period));
    for (auto& v : base) v = bit(rng);
    for (Index i = 0; i < 40; ++i) seq[i] = base[static_cast<std::size_t>(i % period)];
    bool seen_false = false;
    for (Index k = 1; k <= 12; ++k) {
      const bool pe = is_persistently_exciting(seq, k).persistently_exciting;
      if (seen_false) EXPECT_FALSE(pe) << "order " << k;
      seen_false = seen_false || !pe;
    }
  }
}

TEST(TrajectoryStore, RejectsNonFiniteAndNonIncreasingSteps) {
  TrajectoryStore s(Dims{1, 1, 1});
  s.append(0, 0, VectorXd::Zero(1), VectorXd::Zero(1), VectorXd::Zero(1));
  try {
    s.append(0, 0, VectorXd::Zero(1), VectorXd::Zero(1), VectorXd::Zero(1));
    FAIL() << "expected InvalidRecord";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidRecord);
  }
  try {
    s.append(1, 0, VectorXd::Zero(1), VectorXd::Constant(1, std::nan("")), VectorXd::Zero(1));
    FAIL() << "expected InvalidRecord";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidRecord);
  }
  try {
    s.append(1, 0, VectorXd::Zero(2), VectorXd::Zero(1), VectorXd::Zero(1));
    FAIL() << "expected DimensionMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  // A new segment may restart the step counter.
  EXPECT_NO_THROW(s.append(0, 1, VectorXd::Zero(1), VectorXd::Zero(1), VectorXd::Zero(1)));
  EXPECT_EQ(s.segments().size(), 2u);
}

TEST(TrajectoryStore, RingBufferKeepsMostRecent) {
  TrajectoryStore s(Dims{1, 1, 1}, 4);
  for (int k = 0; k < 10; ++k)
    s.append(k, 0, VectorXd::Constant(1, k), VectorXd::Zero(1), VectorXd::Zero(1));
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].step, 6);
  EXPECT_EQ(s.back().step, 9);
}

TEST(TrajectoryStore, CsvRoundTripIsExact) {
  TrajectoryStore s(Dims{2, 1, 2});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 30; ++k) {
    VectorXd u(2), y(1), w(2);
    u << nd(rng), nd(rng);
    y << nd(rng) * 1e3;
    w << nd(rng) * 1e-7, nd(rng);
    s.append(k, k < 15 ? 0 : 1, u, y, w);
  }
  std::stringstream ss;
  s.write_csv(ss);
  const auto back = TrajectoryStore::read_csv(ss);
  ASSERT_EQ(back.size(), s.size());
  EXPECT_EQ(back.dims(), s.dims());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].step, s[i].step);
    EXPECT_EQ(back[i].seg, s[i].seg);
    EXPECT_EQ(back[i].u, s[i].u);
    EXPECT_EQ(back[i].y, s[i].y);
    EXPECT_EQ(back[i].w, s[i].w);
  }
}
