#include "alime/sampler.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace alime {
namespace {

std::vector<EncodedColumn> numeric_map(std::size_t k) {
  std::vector<EncodedColumn> m;
  for (std::size_t c = 0; c < k; ++c) m.push_back({c, std::nullopt});
  return m;
}

// Column 0 numeric, columns 1..3 one categorical feature with three levels.
std::vector<EncodedColumn> mixed_map() { return {{0, std::nullopt}, {1, 0}, {1, 1}, {1, 2}}; }

TEST(TrainingStats, MeansVariancesAndGroups) {
  Matrix raw(4, 4);
  raw << 1, 1, 0, 0,  //
      2, 0, 1, 0,     //
      3, 0, 1, 0,     //
      6, 0, 1, 0;
  const auto s = compute_training_stats(raw, mixed_map());
  EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.variance[0], 3.5);  // (4 + 1 + 0 + 9) / 4
  ASSERT_EQ(s.groups.size(), 1u);
  EXPECT_EQ(s.groups[0].columns, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(s.groups[0].frequencies, (std::vector<double>{0.25, 0.75, 0.0}));
  const auto back = TrainingStats::from_json(nlohmann::json::parse(s.to_json().dump()));
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.variance, s.variance);
  EXPECT_EQ(back.groups[0].frequencies, s.groups[0].frequencies);
}

TEST(GaussianSample, ColumnMeansWithinThreeSigmaOfTrainingMean) {
  Rng rng(1);
  Matrix raw(300, 30);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = 5.0 * rng.normal() + static_cast<double>(i % 30);
  const auto stats = compute_training_stats(raw, numeric_map(30));
  const std::size_t m = 10000;
  const Matrix sample = gaussian_sample(stats, m, CategoricalMode::frequency, 42);
  ASSERT_EQ(sample.rows(), 10000);
  ASSERT_EQ(sample.cols(), 30);
  for (Eigen::Index c = 0; c < 30; ++c) {
    const double bound = 3.0 * std::sqrt(stats.variance[c]) / std::sqrt(static_cast<double>(m));
    EXPECT_NEAR(sample.col(c).mean(), stats.mean[c], bound) << "column " << c;
  }
}

TEST(GaussianSample, ZeroVarianceReproducesTheMean) {
  TrainingStats s;
  s.mean = Vector::LinSpaced(5, -2.0, 2.0);
  s.variance = Vector::Zero(5);
  s.one_hot.assign(5, false);
  const Matrix sample = gaussian_sample(s, 50, CategoricalMode::frequency, 3);
  for (Eigen::Index r = 0; r < sample.rows(); ++r) EXPECT_EQ(RowVector(sample.row(r)), s.mean.transpose());
}

TEST(GaussianSample, CertainCategoryIsAlwaysDrawn) {
  Matrix raw(3, 4);
  raw << 0, 1, 0, 0, 1, 1, 0, 0, 2, 1, 0, 0;
  const auto stats = compute_training_stats(raw, mixed_map());
  const Matrix sample = gaussian_sample(stats, 500, CategoricalMode::frequency, 8);
  for (Eigen::Index r = 0; r < sample.rows(); ++r) {
    EXPECT_EQ(sample(r, 1), 1.0);
    EXPECT_EQ(sample(r, 2), 0.0);
    EXPECT_EQ(sample(r, 3), 0.0);
  }
}

TEST(GaussianSample, FrequencyModeKeepsOneHotGroupsValid) {
  Rng rng(2);
  Matrix raw(40, 4);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    raw.row(r) << rng.normal(), 0, 0, 0;
    raw(r, 1 + static_cast<Eigen::Index>(rng.below(3))) = 1.0;
  }
  const auto stats = compute_training_stats(raw, mixed_map());
  const Matrix sample = gaussian_sample(stats, 4000, CategoricalMode::frequency, 5);
  Vector counts = Vector::Zero(3);
  for (Eigen::Index r = 0; r < sample.rows(); ++r) {
    EXPECT_EQ(sample.row(r).tail(3).sum(), 1.0);
    counts += sample.row(r).tail(3).transpose();
  }
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(counts[c] / 4000.0, stats.groups[0].frequencies[static_cast<std::size_t>(c)], 0.03);
}

TEST(GaussianSample, LiteralModeFillsOneHotColumnsWithOnes) {
  Matrix raw(2, 4);
  raw << 0, 1, 0, 0, 1, 0, 1, 0;
  const auto stats = compute_training_stats(raw, mixed_map());
  const Matrix sample = gaussian_sample(stats, 20, CategoricalMode::literal_paper, 5);
  for (Eigen::Index r = 0; r < sample.rows(); ++r) EXPECT_EQ(sample.row(r).tail(3).sum(), 3.0);
}

TEST(GaussianSample, DeterministicPerSeed) {
  Matrix raw(5, 4);
  raw << 0, 1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3, 1, 0, 0, 4, 0, 1, 0;
  const auto stats = compute_training_stats(raw, mixed_map());
  EXPECT_EQ(gaussian_sample(stats, 100, CategoricalMode::frequency, 9),
            gaussian_sample(stats, 100, CategoricalMode::frequency, 9));
  EXPECT_NE(gaussian_sample(stats, 100, CategoricalMode::frequency, 9),
            gaussian_sample(stats, 100, CategoricalMode::frequency, 10));
}

TEST(GaussianSample, NegativeVarianceIsRejected) {
  TrainingStats s;
  s.mean = Vector::Zero(2);
  s.variance = Vector::Zero(2);
  s.variance[1] = -1.0;
  s.one_hot.assign(2, false);
  try {
    gaussian_sample(s, 10, CategoricalMode::frequency, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_variance);
  }
}

TEST(SelectNearest, SmallExample) {
  const auto s = select_nearest_by_distance({0.5, 0.1, 0.9}, 2);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(s.distances, (std::vector<double>{0.1, 0.5}));
  EXPECT_EQ(select_nearest_by_distance({0.5, 0.1, 0.9}, 3).indices, (std::vector<std::size_t>{1, 0, 2}));
}

TEST(SelectNearest, TiesBrokenByIndex) {
  const auto s = select_nearest_by_distance({1.0, 0.0, 1.0, 0.0, 1.0}, 3);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{1, 3, 0}));
}

TEST(SelectNearest, MatchesFullSortOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = static_cast<Eigen::Index>(1 + rng.below(100));
    const auto dims = static_cast<Eigen::Index>(1 + rng.below(4));
    Matrix latents(m, dims);
    // coarse grid values so that distance ties actually occur
    for (Eigen::Index i = 0; i < latents.size(); ++i) latents.data()[i] = static_cast<double>(rng.below(5));
    RowVector center(dims);
    for (Eigen::Index i = 0; i < dims; ++i) center[i] = static_cast<double>(rng.below(5));
    const std::size_t n = rng.below(static_cast<std::uint64_t>(m) + 1);
    const auto got = select_nearest(latents, center, n);

    const auto all = oracle::sorted_by_distance(latents, center);
    ASSERT_EQ(got.indices.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(got.indices[i], all[i].second);
      EXPECT_EQ(got.distances[i], all[i].first);
    }
    if (n > 0 && n < static_cast<std::size_t>(m)) EXPECT_LE(got.distances.back(), all[n].first);
  }
}

TEST(SelectNearest, Errors) {
  try {
    select_nearest(Matrix::Zero(3, 2), RowVector::Zero(3), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
  try {
    select_nearest_by_distance({1.0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

TEST(KernelWeights, ExponentialOfNegativeDistance) {
  const auto w = kernel_weights({0.0, 1.0, 2.0});
  EXPECT_EQ(w[0], 1.0);
  EXPECT_NEAR(w[1], 0.36788, 1e-5);
  EXPECT_GT(w[0], w[1]);
  EXPECT_GT(w[1], w[2]);
  try {
    kernel_weights({0.5, -0.1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::negative_distance);
  }
}

TEST(KernelWeights, OrderReversalOnRandomDistances) {
  Rng rng(4);
  std::vector<double> d(500);
  for (auto& v : d) v = 10.0 * rng.uniform();
  const auto w = kernel_weights(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_GT(w[i], 0.0);
    EXPECT_LE(w[i], 1.0);
    for (std::size_t j = 0; j < 20; ++j) {
      if (d[i] < d[j]) EXPECT_GT(w[i], w[j]);
    }
  }
}

TEST(LimeKernel, WidthLimits) {
  const auto w = lime_kernel_weights({0.0, 2.0}, 2.0);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_NEAR(w[1], std::exp(-1.0), 1e-15);
  const auto flat = lime_kernel_weights({0.0, 5.0, 100.0}, std::numeric_limits<double>::infinity());
  EXPECT_EQ(flat, (std::vector<double>{1.0, 1.0, 1.0}));
  EXPECT_NEAR(default_kernel_width(16), 3.0, 1e-15);
}

class PoolFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(6);
    raw = Matrix(200, 4);
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      raw.row(r) << 3.0 * rng.normal() + 1.0, 0, 0, 0;
      raw(r, 1 + static_cast<Eigen::Index>(rng.below(3))) = 1.0;
    }
    stats = compute_training_stats(raw, mixed_map());
    scaler = fit_scaler(raw);
    ae = DenoisingAutoencoder::untrained(4, 2, 0.1, 1);
    x = apply_scaler(scaler, RowVector(raw.row(0)));
  }

  Matrix raw;
  TrainingStats stats;
  Scaler scaler;
  DenoisingAutoencoder ae;
  RowVector x;
};

TEST_F(PoolFixture, NearestIsAPrefixOfTheSortedPool) {
  const LatentPool pool(stats, scaler, ae, x, 1000, CategoricalMode::frequency, 11);
  const auto big = pool.nearest(300);
  const auto small = pool.nearest(100);
  EXPECT_EQ(small.points, big.points.topRows(100));
  EXPECT_TRUE(std::is_sorted(big.distances.begin(), big.distances.end()));
  EXPECT_TRUE(std::is_sorted(big.weights.rbegin(), big.weights.rend()));
  EXPECT_TRUE(big.canonical);

  // Latent distances of the kept points do not exceed any excluded point's.
  const Matrix latents = ae.encode(pool.points());
  const RowVector center = ae.encode(x);
  std::vector<bool> kept(1000, false);
  for (auto i : big.source_indices) kept[i] = true;
  for (Eigen::Index r = 0; r < 1000; ++r) {
    if (!kept[static_cast<std::size_t>(r)]) EXPECT_GE((latents.row(r) - center).norm(), big.distances.back());
  }
  for (std::size_t i = 0; i < big.size(); ++i) {
    EXPECT_DOUBLE_EQ(big.weights[i], std::exp(-big.distances[i]));
    EXPECT_EQ(RowVector(big.points.row(static_cast<Eigen::Index>(i))),
              RowVector(pool.points().row(static_cast<Eigen::Index>(big.source_indices[i]))));
  }
}

TEST_F(PoolFixture, PoolIsScaledAndValidatesN) {
  const LatentPool pool(stats, scaler, ae, x, 50, CategoricalMode::frequency, 11);
  const Matrix expected = apply_scaler(scaler, gaussian_sample(stats, 50, CategoricalMode::frequency, 11));
  EXPECT_EQ(pool.points(), expected);
  try {
    pool.nearest(51);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::grid_exceeds_pool);
  }
  EXPECT_FALSE(LatentPool(stats, scaler, ae, x, 50, CategoricalMode::literal_paper, 11).nearest(5).canonical);
}

TEST_F(PoolFixture, LimeNeighborhoodHasNoSelectionStage) {
  const auto s = lime_neighborhood(stats, scaler, x, 500, 1.5, CategoricalMode::frequency, 4);
  EXPECT_EQ(s.size(), 500u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.source_indices[i], i);
    const double d = (RowVector(s.points.row(static_cast<Eigen::Index>(i))) - x).norm();
    EXPECT_DOUBLE_EQ(s.distances[i], d);
    EXPECT_DOUBLE_EQ(s.weights[i], std::exp(-d * d / 2.25));
  }
}

TEST_F(PoolFixture, NeighborhoodCsvDump) {
  const LatentPool pool(stats, scaler, ae, x, 20, CategoricalMode::frequency, 1);
  std::ostringstream out;
  write_neighborhood_csv(out, pool.nearest(3), {"a", "b", "c", "d"});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "source_index,distance,weight,a,b,c,d");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

}  // namespace
}  // namespace alime
