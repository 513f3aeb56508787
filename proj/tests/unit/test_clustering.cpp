#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "geofl/clustering.hpp"

using namespace geofl;

namespace {

std::vector<MetadataVector> uniform_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<MetadataVector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({u(rng), u(rng)});
  return out;
}

void expect_valid_partition(const ClusterModel& m, const std::vector<MetadataVector>& data) {
  ASSERT_EQ(m.members.size(), m.k);
  ASSERT_EQ(m.centroids.size(), m.k);
  std::vector<int> seen(data.size(), 0);
  double inertia = 0;
  for (std::size_t c = 0; c < m.k; ++c) {
    EXPECT_FALSE(m.members[c].empty()) << "cluster " << c;
    EXPECT_TRUE(std::is_sorted(m.members[c].begin(), m.members[c].end()));
    for (const auto i : m.members[c]) {
      ++seen[i];
      // Brute-force nearest centroid with lowest-index ties.
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t j = 0; j < m.k; ++j) {
        double d = 0;
        for (std::size_t x = 0; x < data[i].size(); ++x) {
          d += (data[i][x] - m.centroids[j][x]) * (data[i][x] - m.centroids[j][x]);
        }
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      EXPECT_EQ(best, c) << "point " << i;
      inertia += bd;
    }
  }
  for (const int s : seen) EXPECT_EQ(s, 1);
  EXPECT_NEAR(m.inertia, inertia, 1e-9 * std::max(1.0, inertia));
  for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
    EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1] * (1 + 1e-12));
  }
}

}  // namespace

TEST(KMeans, SingleClusterIsMean) {
  const auto data = uniform_points(200, 1);
  auto rng = RandomStream(3);
  const auto m = kmeans(data, 1, rng);
  double mx = 0, my = 0;
  for (const auto& v : data) {
    mx += v[0];
    my += v[1];
  }
  mx /= 200;
  my /= 200;
  EXPECT_NEAR(m.centroids[0][0], mx, 1e-12);
  EXPECT_NEAR(m.centroids[0][1], my, 1e-12);
  double ss = 0;
  for (const auto& v : data) ss += (v[0] - mx) * (v[0] - mx) + (v[1] - my) * (v[1] - my);
  EXPECT_NEAR(m.inertia, ss, 1e-9);
  expect_valid_partition(m, data);
}

TEST(KMeans, SaturatedKGivesZeroInertia) {
  const auto data = uniform_points(25, 2);
  auto rng = RandomStream(4);
  const auto m = kmeans(data, 25, rng);
  EXPECT_EQ(m.inertia, 0.0);
  for (const auto& members : m.members) EXPECT_EQ(members.size(), 1U);
  expect_valid_partition(m, data);
}

TEST(KMeans, RecoversTwoBlobs) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 0.3);
  std::vector<MetadataVector> data;
  for (int i = 0; i < 50; ++i) data.push_back({-5 + n(rng), n(rng)});
  for (int i = 0; i < 50; ++i) data.push_back({5 + n(rng), n(rng)});
  auto s = RandomStream(6);
  const auto m = kmeans(data, 2, s);
  expect_valid_partition(m, data);
  std::set<std::size_t> left, right;
  for (std::size_t i = 0; i < 50; ++i) left.insert(i);
  for (std::size_t i = 50; i < 100; ++i) right.insert(i);
  std::set<std::size_t> a(m.members[0].begin(), m.members[0].end());
  std::set<std::size_t> b(m.members[1].begin(), m.members[1].end());
  EXPECT_TRUE((a == left && b == right) || (a == right && b == left));
  for (std::size_t c = 0; c < 2; ++c) {
    const double target = m.centroids[c][0] < 0 ? -5.0 : 5.0;
    EXPECT_NEAR(m.centroids[c][0], target, 0.2);
    EXPECT_NEAR(m.centroids[c][1], 0.0, 0.2);
  }
}

TEST(KMeans, RejectsBadArguments) {
  const auto data = uniform_points(5, 1);
  auto rng = RandomStream(1);
  EXPECT_THROW(kmeans(data, 0, rng), ConfigError);
  EXPECT_THROW(kmeans(data, 6, rng), ConfigError);
  auto bad = data;
  bad[2][1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(kmeans(bad, 2, rng), ConfigError);
  auto ragged = data;
  ragged[1].push_back(1.0);
  EXPECT_THROW(kmeans(ragged, 2, rng), ConfigError);
}

TEST(KMeans, PartitionValidOnManyInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto data = uniform_points(60 + seed * 7, seed);
    auto rng = RandomStream(seed);
    const std::size_t k = 1 + seed % 12;
    expect_valid_partition(kmeans(data, k, rng), data);
  }
}

TEST(KMeans, EmptyClusterRepairKeepsEveryClusterPopulated) {
  // Heavy duplication makes empty clusters likely after seeding.
  std::vector<MetadataVector> data;
  for (int i = 0; i < 40; ++i) data.push_back({0.0, 0.0});
  for (int i = 0; i < 3; ++i) data.push_back({10.0 + i, 0.0});
  auto rng = RandomStream(12);
  const auto m = kmeans(data, 4, rng);
  for (const auto& members : m.members) EXPECT_FALSE(members.empty());
  EXPECT_EQ(m.population(), data.size());
}

TEST(KMeans, SeedDeterminism) {
  const auto data = uniform_points(300, 8);
  auto a = RandomStream(77);
  auto b = RandomStream(77);
  const auto ma = kmeans(data, 7, a);
  const auto mb = kmeans(data, 7, b);
  EXPECT_EQ(ma.members, mb.members);
  EXPECT_EQ(ma.centroids, mb.centroids);
  EXPECT_EQ(ma.inertia, mb.inertia);
}

TEST(KMeans, TranslationEquivariance) {
  const auto data = uniform_points(300, 9);
  auto shifted = data;
  for (auto& v : shifted) {
    v[0] += 64.0;
    v[1] -= 32.0;
  }
  auto a = RandomStream(5);
  auto b = RandomStream(5);
  const auto ma = kmeans(data, 6, a);
  const auto mb = kmeans(shifted, 6, b);
  EXPECT_EQ(ma.members, mb.members);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_NEAR(mb.centroids[c][0] - ma.centroids[c][0], 64.0, 1e-9);
    EXPECT_NEAR(mb.centroids[c][1] - ma.centroids[c][1], -32.0, 1e-9);
  }
}

TEST(Assign, NearestWithLowestIndexTies) {
  ClusterModel m;
  m.k = 5;
  m.centroids = {{0, 0}, {-1, 0}, {5, 5}, {2, 2}, {1, 0}};
  m.members.assign(5, {0});
  EXPECT_EQ(assign(m, std::vector<double>{2, 2}), 3U);
  EXPECT_EQ(assign(m, std::vector<double>{0, -3}), 0U);
  // Move centroid 0 away so (0,0) is equidistant from centroids 1 and 4.
  m.centroids[0] = {0, 10};
  EXPECT_EQ(assign(m, std::vector<double>{0, 0}), 1U);
  EXPECT_THROW(assign(m, std::vector<double>{1, 2, 3}), ConfigError);
}

TEST(Assign, MatchesExhaustiveScan) {
  const auto data = uniform_points(500, 10);
  auto rng = RandomStream(3);
  const auto m = kmeans(data, 9, rng);
  const auto probes = uniform_points(1000, 11);
  for (const auto& x : probes) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < m.k; ++c) {
      const double d = (x[0] - m.centroids[c][0]) * (x[0] - m.centroids[c][0]) +
                       (x[1] - m.centroids[c][1]) * (x[1] - m.centroids[c][1]);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    EXPECT_EQ(assign(m, x), best);
  }
}

TEST(ClusterModelJson, RoundTrip) {
  const auto data = uniform_points(100, 12);
  auto rng = RandomStream(1);
  const auto m = kmeans(data, 4, rng);
  const auto back = cluster_model_from_json(nlohmann::json::parse(cluster_model_to_json(m).dump()));
  EXPECT_EQ(back.k, m.k);
  EXPECT_EQ(back.centroids, m.centroids);
  EXPECT_EQ(back.members, m.members);
  EXPECT_EQ(back.inertia, m.inertia);
  auto broken = cluster_model_to_json(m);
  broken["k"] = 9;
  EXPECT_THROW(cluster_model_from_json(broken), DataError);
}
