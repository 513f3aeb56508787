#pragma once

// k-means over per-user metadata vectors. Runs once before training; the
// resulting groups drive one-per-group participant selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofl/errors.hpp"
#include "geofl/rng.hpp"
#include "geofl/spatial_partition.hpp"

namespace geofl {

using MetadataVector = std::vector<double>;

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct ClusterModel {
  std::size_t k = 0;
  std::vector<MetadataVector> centroids;
  std::vector<std::vector<std::size_t>> members;  // ascending user indices per group
  double inertia = 0.0;
  // Inertia after each assignment step; not serialized.
  std::vector<double> inertia_history;

  [[nodiscard]] std::size_t dim() const noexcept {
    return centroids.empty() ? 0 : centroids.front().size();
  }
  [[nodiscard]] std::size_t population() const noexcept {
    std::size_t n = 0;
    for (const auto& m : members) n += m.size();
    return n;
  }
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Nearest centroid; ties go to the lowest index.
inline std::size_t nearest(const std::vector<MetadataVector>& centroids,
                           std::span<const double> x, double* best_out = nullptr) noexcept {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(centroids[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best_out != nullptr) *best_out = best_d;
  return best;
}

inline std::vector<MetadataVector> kmeanspp_seed(const std::vector<MetadataVector>& data,
                                                 std::size_t k, RandomStream& rng) {
  const std::size_t n = data.size();
  std::vector<MetadataVector> centroids;
  centroids.reserve(k);
  std::vector<bool> chosen(n, false);

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  centroids.push_back(data[first]);
  chosen[first] = true;

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(data[i], centroids[0]);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t next = n;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        acc += d2[i];
        if (d2[i] > 0.0 && acc >= target) {
          next = i;
          break;
        }
      }
      if (next == n) {  // rounding left target just above the final sum
        for (std::size_t i = n; i-- > 0;) {
          if (!chosen[i] && d2[i] > 0.0) {
            next = i;
            break;
          }
        }
      }
    } else {
      // Every remaining point coincides with a centroid; take any unchosen one.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) rest.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> r(0, rest.size() - 1);
      next = rest[r(rng)];
    }
    chosen[next] = true;
    centroids.push_back(data[next]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(data[i], centroids.back()));
  }
  return centroids;
}

// Assigns every point, then fills any empty cluster with the point farthest
// from its current centroid (taken from a cluster that keeps at least one
// member). The moved point becomes the empty cluster's centroid.
inline void assign_and_repair(const std::vector<MetadataVector>& data,
                              std::vector<MetadataVector>& centroids,
                              std::vector<std::size_t>& label) {
  const std::size_t k = centroids.size();
  std::vector<std::size_t> size(k, 0);
  std::vector<double> dist(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    label[i] = nearest(centroids, data[i], &dist[i]);
    ++size[label[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (size[c] != 0) continue;
    std::size_t far = data.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (size[label[i]] > 1 && dist[i] > far_d) {
        far_d = dist[i];
        far = i;
      }
    }
    --size[label[far]];
    label[far] = c;
    size[c] = 1;
    dist[far] = 0.0;
    centroids[c] = data[far];
  }
}

inline double inertia_of(const std::vector<MetadataVector>& data,
                         const std::vector<MetadataVector>& centroids,
                         const std::vector<std::size_t>& label) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += sq_dist(data[i], centroids[label[i]]);
  return s;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeding. Stops when the largest centroid
/// shift is <= tol or after max_iters update steps. Output clusters are never
/// empty, and every member's nearest centroid is its own.
inline ClusterModel kmeans(const std::vector<MetadataVector>& data, std::size_t k,
                           const KMeansOptions& opts, RandomStream& rng) {
  if (k == 0) throw ConfigError("kmeans: k must be at least 1");
  if (k > data.size()) {
    throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(data.size()) + " input vectors");
  }
  if (opts.max_iters < 1) throw ConfigError("kmeans: max_iters must be at least 1");
  if (!(opts.tol >= 0.0)) throw ConfigError("kmeans: tol must be non-negative");
  const std::size_t dim = data.front().size();
  for (const auto& v : data) {
    if (v.size() != dim) throw ConfigError("kmeans: metadata vectors differ in length");
    for (const double x : v) {
      if (!std::isfinite(x)) throw ConfigError("kmeans: non-finite metadata value");
    }
  }

  ClusterModel model;
  model.k = k;
  auto centroids = detail::kmeanspp_seed(data, k, rng);
  std::vector<std::size_t> label(data.size());

  auto record = [&](double inertia) {
    // Lloyd steps and the repair move can only lower the objective.
    if (!model.inertia_history.empty() &&
        inertia > model.inertia_history.back() * (1.0 + 1e-12) + 1e-300) {
      throw std::logic_error("kmeans: inertia increased");
    }
    model.inertia_history.push_back(inertia);
  };

  for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
    detail::assign_and_repair(data, centroids, label);
    record(detail::inertia_of(data, centroids, label));

    std::vector<MetadataVector> next(k, MetadataVector(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      ++count[label[i]];
      for (std::size_t d = 0; d < dim; ++d) next[label[i]][d] += data[i][d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t d = 0; d < dim; ++d) next[c][d] /= static_cast<double>(count[c]);
      shift = std::max(shift, std::sqrt(detail::sq_dist(next[c], centroids[c])));
    }
    centroids = std::move(next);
    if (shift <= opts.tol) break;
  }

  detail::assign_and_repair(data, centroids, label);
  model.inertia = detail::inertia_of(data, centroids, label);
  record(model.inertia);

  model.centroids = std::move(centroids);
  model.members.assign(k, {});
  for (std::size_t i = 0; i < data.size(); ++i) model.members[label[i]].push_back(i);
  return model;
}

inline ClusterModel kmeans(const std::vector<MetadataVector>& data, std::size_t k,
                           RandomStream& rng) {
  return kmeans(data, k, KMeansOptions{}, rng);
}

/// Index of the nearest centroid, lowest index on ties.
inline std::size_t assign(const ClusterModel& model, std::span<const double> x) {
  if (x.size() != model.dim()) {
    throw ConfigError("assign: metadata has dimension " + std::to_string(x.size()) +
                      ", model expects " + std::to_string(model.dim()));
  }
  return detail::nearest(model.centroids, x);
}

/// Location metadata: one 2-D vector per UE.
inline std::vector<MetadataVector> location_metadata(const UePlacement& ues) {
  std::vector<MetadataVector> out;
  out.reserve(ues.positions.size());
  for (const auto& z : ues.positions) out.push_back({z.x, z.y});
  return out;
}

inline nlohmann::json cluster_model_to_json(const ClusterModel& m) {
  return nlohmann::json{{"k", m.k}, {"centroids", m.centroids}, {"members", m.members},
                        {"inertia", m.inertia}};
}

inline ClusterModel cluster_model_from_json(const nlohmann::json& j) {
  try {
    ClusterModel m;
    m.k = j.at("k").get<std::size_t>();
    m.centroids = j.at("centroids").get<std::vector<MetadataVector>>();
    m.members = j.at("members").get<std::vector<std::vector<std::size_t>>>();
    m.inertia = j.at("inertia").get<double>();
    if (m.centroids.size() != m.k || m.members.size() != m.k) {
      throw DataError("cluster model: centroid/member count differs from k");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("cluster model JSON: ") + e.what());
  }
}

}  // namespace geofl
