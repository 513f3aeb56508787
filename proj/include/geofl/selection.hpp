#pragma once

// Per-round participant selection: one uniformly random member from each
// cluster, or a uniform sample without replacement as the baseline.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "geofl/clustering.hpp"
#include "geofl/errors.hpp"
#include "geofl/rng.hpp"

namespace geofl {

struct ClusterBased {
  ClusterModel clusters;
};

struct UniformRandom {
  std::size_t population_size = 0;
  std::size_t sample_size = 0;
};

using SelectionPolicy = std::variant<ClusterBased, UniformRandom>;

enum class PolicyKind { cluster, random };

[[nodiscard]] inline std::string_view to_string(PolicyKind k) noexcept {
  return k == PolicyKind::cluster ? "cluster" : "random";
}

[[nodiscard]] inline PolicyKind parse_policy_kind(std::string_view s) {
  if (s == "cluster") return PolicyKind::cluster;
  if (s == "random") return PolicyKind::random;
  throw ConfigError("unknown policy '" + std::string(s) + "' (expected cluster or random)");
}

[[nodiscard]] inline PolicyKind kind_of(const SelectionPolicy& p) noexcept {
  return std::holds_alternative<ClusterBased>(p) ? PolicyKind::cluster : PolicyKind::random;
}

struct SelectedSet {
  std::size_t round = 0;
  std::vector<std::size_t> indices;
};

inline void validate(const SelectionPolicy& policy) {
  if (const auto* cb = std::get_if<ClusterBased>(&policy)) {
    if (cb->clusters.members.empty()) throw ConfigError("cluster policy has no clusters");
    for (std::size_t c = 0; c < cb->clusters.members.size(); ++c) {
      if (cb->clusters.members[c].empty()) {
        throw ConfigError("cluster " + std::to_string(c) + " has no members");
      }
    }
  } else {
    const auto& ur = std::get<UniformRandom>(policy);
    if (ur.sample_size > ur.population_size) {
      throw ConfigError("random policy: sample size " + std::to_string(ur.sample_size) +
                        " exceeds population " + std::to_string(ur.population_size));
    }
  }
}

/// Draws S_t. Cluster-based output lists one member per cluster in cluster
/// order; the uniform baseline returns ascending indices.
inline SelectedSet select(const SelectionPolicy& policy, std::size_t round, RandomStream& rng) {
  validate(policy);
  SelectedSet out;
  out.round = round;
  if (const auto* cb = std::get_if<ClusterBased>(&policy)) {
    out.indices.reserve(cb->clusters.members.size());
    for (const auto& members : cb->clusters.members) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      out.indices.push_back(members[pick(rng)]);
    }
  } else {
    const auto& ur = std::get<UniformRandom>(policy);
    // Partial Fisher-Yates.
    std::vector<std::size_t> perm(ur.population_size);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = 0; i < ur.sample_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, perm.size() - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    out.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(ur.sample_size));
    std::sort(out.indices.begin(), out.indices.end());
  }
  return out;
}

/// Selection keyed by (seed, round): reproducible, and independent across rounds.
inline SelectedSet select_for_round(const SelectionPolicy& policy, std::uint64_t seed,
                                    std::size_t round) {
  auto rng = make_stream(seed, StreamTag::selection,
                         static_cast<std::uint64_t>(kind_of(policy)), round);
  return select(policy, round, rng);
}

/// Audit trace row: round,policy,indices (indices separated by ';').
inline void write_selection_header(std::ostream& os) { os << "round,policy,indices\n"; }

inline void write_selection_row(std::ostream& os, PolicyKind policy, const SelectedSet& s) {
  os << s.round << ',' << to_string(policy) << ',';
  for (std::size_t i = 0; i < s.indices.size(); ++i) {
    if (i != 0) os << ';';
    os << s.indices[i];
  }
  os << '\n';
}

}  // namespace geofl
