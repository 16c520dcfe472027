#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ncde/paths.hpp"

using namespace ncde;

namespace {

SampledPath make_path(std::vector<double> t, std::vector<std::vector<double>> rows) {
  RowMatrix v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return SampledPath(SamplingGrid(std::move(t)), std::move(v));
}

double fbm_cov(double s, double t, double H) {
  return 0.5 * (std::pow(s, 2 * H) + std::pow(t, 2 * H) - std::pow(std::abs(t - s), 2 * H));
}

}  // namespace

TEST(SamplingGrid, RejectsBadTimes) {
  EXPECT_THROW(SamplingGrid({0.0}), ValidationError);
  EXPECT_THROW(SamplingGrid({0.1, 1.0}), ValidationError);
  EXPECT_THROW(SamplingGrid({0.0, 0.9}), ValidationError);
  EXPECT_THROW(SamplingGrid({0.0, 0.5, 0.5, 1.0}), ValidationError);
  EXPECT_THROW(SamplingGrid({0.0, 0.6, 0.4, 1.0}), ValidationError);
  EXPECT_NO_THROW(SamplingGrid({0.0, 1.0}));
}

TEST(SamplingGrid, UniformMesh) {
  for (std::size_t k : {2u, 3u, 11u, 100u}) {
    const auto g = SamplingGrid::uniform(k);
    EXPECT_EQ(g.size(), k);
    EXPECT_NEAR(g.mesh(), 1.0 / static_cast<double>(k - 1), 1e-15);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[k - 1], 1.0);
  }
}

TEST(SampledPath, RowCountMustMatchGrid) {
  EXPECT_THROW(SampledPath(SamplingGrid::uniform(3), RowMatrix::Zero(2, 1)), ValidationError);
  EXPECT_THROW(SampledPath(SamplingGrid::uniform(3), RowMatrix::Zero(3, 0)), ValidationError);
}

TEST(PathStats, HandExample) {
  const auto p = make_path({0.0, 0.5, 1.0}, {{0.0}, {1.0}, {0.0}});
  const auto s = path_stats(p);
  EXPECT_DOUBLE_EQ(s.mesh, 0.5);
  EXPECT_DOUBLE_EQ(s.total_variation, 2.0);
  EXPECT_DOUBLE_EQ(s.max_increment, 1.0);
  EXPECT_DOUBLE_EQ(s.lipschitz_estimate, 2.0);
  EXPECT_DOUBLE_EQ(s.initial_norm, 0.0);
}

TEST(PathStats, ConstantPathHasNoVariation) {
  const auto p = make_path({0.0, 0.25, 1.0}, {{3.0, -1.0}, {3.0, -1.0}, {3.0, -1.0}});
  const auto s = path_stats(p);
  EXPECT_EQ(s.total_variation, 0.0);
  EXPECT_EQ(s.max_increment, 0.0);
  EXPECT_DOUBLE_EQ(s.initial_norm, std::sqrt(10.0));
}

TEST(PathStats, InvariantsOnRandomPaths) {
  const auto paths = sample_fbm(50, 3, SamplingGrid::uniform(40), 0.4, 11);
  for (const auto& p : paths) {
    const auto s = path_stats(p);
    EXPECT_GE(s.total_variation, s.max_increment);
    EXPECT_LE(s.max_increment, s.lipschitz_estimate * s.mesh + 1e-12);
    EXPECT_GE(s.max_increment, 0.0);
  }
}

TEST(AugmentTime, AddsTimestampsAsChannelZero) {
  const auto p = make_path({0.0, 0.5, 1.0}, {{7.0}, {8.0}, {9.0}});
  const auto a = augment_time_channel(p);
  ASSERT_EQ(a.dim(), 2);
  EXPECT_EQ(a.values(1, 0), 0.5);
  EXPECT_EQ(a.values(2, 1), 9.0);
  const auto b = augment_time_channel(a);
  ASSERT_EQ(b.dim(), 3);
  for (Eigen::Index k = 0; k < 3; ++k) {
    EXPECT_EQ(b.values(k, 0), p.grid[static_cast<std::size_t>(k)]);
    EXPECT_EQ(b.values(k, 1), p.grid[static_cast<std::size_t>(k)]);
    EXPECT_EQ(b.values(k, 2), p.values(k, 0));
  }
  const auto z = augment_time_channel(make_path({0.0, 1.0}, {{0.0}, {0.0}}));
  EXPECT_EQ(z.values(1, 0), 1.0);
}

TEST(FillForward, DefinitionExample) {
  const auto p = make_path({0.0, 0.5, 1.0}, {{1.0}, {2.0}, {3.0}});
  const auto q = fill_forward(p, SamplingGrid({0.0, 0.3, 0.5, 0.7, 1.0}));
  EXPECT_EQ(q.values(0, 0), 1.0);
  EXPECT_EQ(q.values(1, 0), 1.0);
  EXPECT_EQ(q.values(2, 0), 2.0);
  EXPECT_EQ(q.values(3, 0), 2.0);
  EXPECT_EQ(q.values(4, 0), 3.0);
}

TEST(FillForward, IdempotentOnOwnGrid) {
  const auto p = sample_fbm(1, 2, SamplingGrid::uniform(17), 0.6, 3).front();
  const auto q = fill_forward(p, p.grid);
  EXPECT_EQ(q.values, p.values);
}

TEST(FillForward, ConstantSourceStaysConstant) {
  const auto p = make_path({0.0, 0.4, 1.0}, {{2.0}, {2.0}, {2.0}});
  const auto q = fill_forward(p, SamplingGrid::uniform(33));
  EXPECT_TRUE((q.values.array() == 2.0).all());
}

TEST(FillForward, SupDistanceBoundedByLipschitzTimesMesh) {
  const SamplingGrid fine = SamplingGrid::uniform(1025);
  const auto paths = sample_fbm(20, 2, fine, 0.7, 5);
  for (std::size_t k : {3u, 5u, 9u, 17u}) {
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto coarse = downsample_random(paths[i], k, 100 + i);
      const auto embedded = fill_forward(coarse, fine);
      const auto fs = path_stats(paths[i]);
      EXPECT_LE(sup_distance(paths[i], embedded), fs.lipschitz_estimate * coarse.grid.mesh() + 1e-12);
      // Total variation of the embedding equals that of the coarse source.
      EXPECT_NEAR(path_stats(embedded).total_variation, path_stats(coarse).total_variation, 1e-12);
    }
  }
}

TEST(SupDistance, LinearPathAgainstTwoPointGrid) {
  double prev = 0.0;
  for (std::size_t n : {5u, 33u, 257u, 2049u}) {
    const SamplingGrid fine = SamplingGrid::uniform(n);
    RowMatrix v(static_cast<Eigen::Index>(n), 1);
    for (std::size_t k = 0; k < n; ++k) v(static_cast<Eigen::Index>(k), 0) = fine[k];
    const SampledPath x(fine, v);
    const auto coarse = restrict_to(x, SamplingGrid({0.0, 1.0}));
    const double d = sup_distance(x, fill_forward(coarse, fine));
    EXPECT_DOUBLE_EQ(d, 1.0 - 1.0 / static_cast<double>(n - 1));
    EXPECT_GT(d, prev);
    prev = d;
  }
  EXPECT_GT(prev, 0.999);
}

TEST(SupDistance, GridMismatchIsRejected) {
  const auto a = make_path({0.0, 1.0}, {{0.0}, {1.0}});
  const auto b = make_path({0.0, 0.5, 1.0}, {{0.0}, {1.0}, {1.0}});
  EXPECT_THROW((void)sup_distance(a, b), ValidationError);
  EXPECT_EQ(sup_distance(b, b), 0.0);
}

TEST(Downsample, EndpointsAlwaysKeptAndSorted) {
  const auto p = sample_fbm(1, 2, SamplingGrid::uniform(200), 0.4, 9).front();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto q = downsample_random(p, 5, seed);
    ASSERT_EQ(q.grid.size(), 5u);
    EXPECT_EQ(q.grid[0], 0.0);
    EXPECT_EQ(q.grid[4], 1.0);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_LT(q.grid[k - 1], q.grid[k]);
    const auto back = restrict_to(p, q.grid);
    EXPECT_EQ(back.values, q.values);
  }
}

TEST(Downsample, EdgeSizes) {
  const auto p = sample_fbm(1, 1, SamplingGrid::uniform(12), 0.5, 2).front();
  const auto full = downsample_random(p, 12, 4);
  EXPECT_EQ(full.grid, p.grid);
  EXPECT_EQ(full.values, p.values);
  const auto two = downsample_random(p, 2, 4);
  EXPECT_EQ(two.grid.times(), (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW((void)downsample_random(p, 13, 4), ValidationError);
  EXPECT_THROW((void)downsample_random(p, 1, 4), ValidationError);
}

TEST(Downsample, SubsetsAreSpreadOverInteriorPoints) {
  const auto p = sample_fbm(1, 1, SamplingGrid::uniform(10), 0.5, 2).front();
  std::set<double> seen;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto q = downsample_random(p, 3, seed);
    seen.insert(q.grid[1]);
  }
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Fbm, RejectsInvalidHurst) {
  EXPECT_THROW((void)sample_fbm(1, 1, SamplingGrid::uniform(5), 0.0, 1), ValidationError);
  EXPECT_THROW((void)sample_fbm(1, 1, SamplingGrid::uniform(5), 1.0, 1), ValidationError);
  EXPECT_THROW((void)sample_fbm(0, 1, SamplingGrid::uniform(5), 0.5, 1), ValidationError);
}

TEST(Fbm, DeterministicAndThreadIndependent) {
  const auto g = SamplingGrid::uniform(100);
  const auto a = sample_fbm(30, 4, g, 0.4, 77, 1);
  const auto b = sample_fbm(30, 4, g, 0.4, 77, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].values, b[i].values);
    EXPECT_EQ(a[i].values.row(0).norm(), 0.0);
  }
  const auto c = sample_fbm(30, 4, g, 0.4, 78, 1);
  EXPECT_NE(a[0].values, c[0].values);
}

TEST(Fbm, DownsampledGridShape) {
  const auto paths = sample_fbm(3, 4, SamplingGrid::uniform(100), 0.7, 1);
  EXPECT_EQ(paths.size(), 3u);
  EXPECT_EQ(paths[0].values.rows(), 100);
  EXPECT_EQ(paths[0].dim(), 4);
}

// Monte-Carlo covariance at 5 probe pairs within 3 standard errors.
TEST(Fbm, CovarianceMatchesClosedForm) {
  const SamplingGrid g = SamplingGrid::uniform(16);
  const std::vector<std::pair<std::size_t, std::size_t>> probes{{1, 15}, {5, 10}, {7, 8}, {15, 15}, {3, 12}};
  for (double H : {0.4, 0.5, 0.6, 0.7}) {
    const std::size_t n = 40000;
    const FbmGenerator gen(g, H);
    std::vector<double> sum(probes.size(), 0.0);
    std::vector<double> sum2(probes.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = make_rng(1234, i);
      const auto p = gen.sample(1, rng);
      for (std::size_t j = 0; j < probes.size(); ++j) {
        const double v = p.values(static_cast<Eigen::Index>(probes[j].first), 0) *
                         p.values(static_cast<Eigen::Index>(probes[j].second), 0);
        sum[j] += v;
        sum2[j] += v * v;
      }
    }
    for (std::size_t j = 0; j < probes.size(); ++j) {
      const double mean = sum[j] / n;
      const double se = std::sqrt((sum2[j] / n - mean * mean) / n);
      const double s = g[probes[j].first];
      const double t = g[probes[j].second];
      EXPECT_NEAR(mean, fbm_cov(s, t, H), 3 * se) << "H=" << H << " s=" << s << " t=" << t;
      if (H == 0.5) {
        EXPECT_NEAR(fbm_cov(s, t, H), std::min(s, t), 1e-15);
      }
    }
  }
}

TEST(PathCsv, RoundTrip) {
  const auto paths = sample_fbm(3, 2, SamplingGrid::uniform(9), 0.6, 4);
  const auto back = paths_from_csv(paths_to_csv(paths));
  ASSERT_EQ(back.size(), paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    EXPECT_EQ(back[i].grid, paths[i].grid);
    EXPECT_EQ(back[i].values, paths[i].values);
  }
  const auto one = path_from_csv(path_to_csv(paths[1]));
  EXPECT_EQ(one.values, paths[1].values);
  EXPECT_EQ(path_to_csv(paths[0]).substr(0, 11), "t,ch0,ch1\n0");
}

TEST(PathCsv, MalformedInputIsRejected) {
  EXPECT_THROW((void)path_from_csv("t,ch0\n0,1\n0.5,x\n1,2\n"), ValidationError);
  EXPECT_THROW((void)path_from_csv("t,ch0\n0,1\n0.5\n1,2\n"), ValidationError);
}

TEST(DatasetManifest, JsonRoundTrip) {
  DatasetManifest m{42, 0.7, 4, 100, 25};
  nlohmann::json j = m;
  EXPECT_EQ(j["grid"]["n_points"], 100);
  const auto back = j.get<DatasetManifest>();
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.n_paths, 25u);
  EXPECT_EQ(back.hurst, 0.7);
}
