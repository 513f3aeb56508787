#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "geofl/selection.hpp"

using namespace geofl;

namespace {

ClusterModel clusters_of(std::vector<std::vector<std::size_t>> members) {
  ClusterModel m;
  m.k = members.size();
  m.members = std::move(members);
  m.centroids.assign(m.k, {0.0, 0.0});
  return m;
}

}  // namespace

TEST(Select, SingletonClustersInClusterOrder) {
  const SelectionPolicy p = ClusterBased{clusters_of({{4}, {0}, {9}, {2}})};
  auto rng = RandomStream(1);
  const auto s = select(p, 3, rng);
  EXPECT_EQ(s.round, 3U);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{4, 0, 9, 2}));
}

TEST(Select, OnePerClusterEveryRound) {
  const auto m = clusters_of({{0, 1, 2}, {3, 4}, {5}, {6, 7, 8, 9}, {10, 11}});
  const SelectionPolicy p = ClusterBased{m};
  for (std::size_t t = 1; t <= 200; ++t) {
    const auto s = select_for_round(p, 42, t);
    ASSERT_EQ(s.indices.size(), 5U);
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_TRUE(std::find(m.members[c].begin(), m.members[c].end(), s.indices[c]) !=
                  m.members[c].end());
    }
    EXPECT_EQ(std::set<std::size_t>(s.indices.begin(), s.indices.end()).size(), 5U);
  }
}

TEST(Select, WithinClusterUniformity) {
  const std::size_t m = 6;
  const SelectionPolicy p = ClusterBased{clusters_of({{10, 11, 12, 13, 14, 15}, {0}})};
  std::vector<double> freq(m, 0.0);
  const std::size_t rounds = 10000;
  for (std::size_t t = 1; t <= rounds; ++t) freq[select_for_round(p, 5, t).indices[0] - 10] += 1;
  const double q = 1.0 / m;
  const double tol = 3.0 * std::sqrt(q * (1 - q) / rounds);
  for (const double f : freq) EXPECT_NEAR(f / rounds, q, tol);
}

TEST(Select, UniformRandomWithoutReplacement) {
  const SelectionPolicy p = UniformRandom{50, 10};
  std::vector<double> hits(50, 0.0);
  const std::size_t rounds = 5000;
  for (std::size_t t = 1; t <= rounds; ++t) {
    const auto s = select_for_round(p, 9, t);
    ASSERT_EQ(s.indices.size(), 10U);
    ASSERT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
    ASSERT_EQ(std::adjacent_find(s.indices.begin(), s.indices.end()), s.indices.end());
    for (const auto i : s.indices) hits[i] += 1;
  }
  const double q = 10.0 / 50.0;
  const double tol = 4.0 * std::sqrt(q * (1 - q) / rounds);
  for (const double h : hits) EXPECT_NEAR(h / rounds, q, tol);
}

TEST(Select, FullPopulationSample) {
  const SelectionPolicy p = UniformRandom{7, 7};
  const auto s = select_for_round(p, 1, 1);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(Select, ConfigurationErrors) {
  auto rng = RandomStream(1);
  EXPECT_THROW(select(SelectionPolicy{ClusterBased{clusters_of({{1}, {}})}}, 1, rng), ConfigError);
  EXPECT_THROW(select(SelectionPolicy{UniformRandom{3, 4}}, 1, rng), ConfigError);
}

TEST(Select, RoundKeyedDeterminism) {
  const SelectionPolicy p = UniformRandom{1000, 10};
  EXPECT_EQ(select_for_round(p, 3, 17).indices, select_for_round(p, 3, 17).indices);
  EXPECT_NE(select_for_round(p, 3, 17).indices, select_for_round(p, 3, 18).indices);
  EXPECT_NE(select_for_round(p, 3, 17).indices, select_for_round(p, 4, 17).indices);
}

TEST(SelectionTrace, CsvRows) {
  std::ostringstream os;
  write_selection_header(os);
  write_selection_row(os, PolicyKind::cluster, SelectedSet{4, {3, 17, 42}});
  EXPECT_EQ(os.str(), "round,policy,indices\n4,cluster,3;17;42\n");
}
