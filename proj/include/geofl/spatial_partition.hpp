#pragma once

// Spatially correlated data partition: UEs placed uniformly on a square,
// data points scattered by a homogeneous Poisson point process over a square
// extended by the sensing radius, and each UE capturing every point within
// its sensing radius. Points captured by several UEs are shared data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "geofl/errors.hpp"
#include "geofl/rng.hpp"

namespace geofl {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

[[nodiscard]] inline double squared_distance(Vec2 a, Vec2 b) noexcept {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Capture predicate. Inclusive: a point at exactly distance R is captured.
[[nodiscard]] inline bool within_radius(Vec2 ue, Vec2 point, double radius) noexcept {
  return squared_distance(ue, point) <= radius * radius;
}

/// How far the data square extends past the UE square on each side.
/// full: R, so every disc lies inside it and D_k ~ Poisson(lambda pi R^2)
///       for every UE. half: R/2, the side L + R of the literal model, which
///       clips discs of UEs within R/2 of the edge.
enum class DataMargin { full, half };

[[nodiscard]] inline std::string_view to_string(DataMargin m) noexcept {
  return m == DataMargin::full ? "full" : "half";
}

[[nodiscard]] inline DataMargin parse_data_margin(std::string_view s) {
  if (s == "full") return DataMargin::full;
  if (s == "half") return DataMargin::half;
  throw ConfigError("unknown data_margin '" + std::string(s) + "' (expected full or half)");
}

struct WorldConfig {
  double side_length = 10.0;     // UEs live on [-L/2, L/2]^2
  double sensing_radius = 2.0;   // capture radius R
  double intensity = 500.0;      // expected data points per unit area
  std::size_t num_ues = 100;
  std::size_t num_classes = 10;
  std::uint64_t seed = 0;
  DataMargin data_margin = DataMargin::full;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;

  void validate() const {
    if (!(side_length > 0.0) || !std::isfinite(side_length)) {
      throw ConfigError("world.side_length must be positive and finite");
    }
    if (!(sensing_radius > 0.0) || !std::isfinite(sensing_radius)) {
      throw ConfigError("world.sensing_radius must be positive and finite");
    }
    if (!(intensity >= 0.0) || !std::isfinite(intensity)) {
      throw ConfigError("world.intensity must be non-negative and finite");
    }
    if (num_ues < 1) throw ConfigError("world.num_ues must be at least 1");
    if (num_classes < 2) throw ConfigError("world.num_classes must be at least 2");
  }

  /// Half-width of the UE region.
  [[nodiscard]] double ue_half_width() const noexcept { return side_length / 2.0; }
  /// Side of the data square: L + 2R (full margin) or L + R (half).
  [[nodiscard]] double data_side() const noexcept {
    return side_length + (data_margin == DataMargin::full ? 2.0 : 1.0) * sensing_radius;
  }
  [[nodiscard]] double data_half_width() const noexcept { return data_side() / 2.0; }
  [[nodiscard]] double data_area() const noexcept { return data_side() * data_side(); }
};

enum class Labeling { iid, region };

[[nodiscard]] inline std::string_view to_string(Labeling l) noexcept {
  return l == Labeling::iid ? "iid" : "region";
}

[[nodiscard]] inline Labeling parse_labeling(std::string_view s) {
  if (s == "iid") return Labeling::iid;
  if (s == "region") return Labeling::region;
  throw ConfigError("unknown labeling '" + std::string(s) + "' (expected iid or region)");
}

struct UePlacement {
  std::vector<Vec2> positions;
};

struct PointCloud {
  std::vector<Vec2> positions;
  std::vector<int> labels;  // empty until a labeling pass runs

  [[nodiscard]] std::size_t size() const noexcept { return positions.size(); }
  [[nodiscard]] bool labeled() const noexcept { return labels.size() == positions.size(); }
};

using CaptureLists = std::vector<std::vector<std::size_t>>;

struct SpatialPartition {
  WorldConfig world;
  Labeling labeling = Labeling::iid;
  UePlacement ues;
  PointCloud points;
  CaptureLists capture_lists;

  /// D_k for every UE.
  [[nodiscard]] std::vector<std::size_t> sample_counts() const {
    std::vector<std::size_t> out;
    out.reserve(capture_lists.size());
    for (const auto& c : capture_lists) out.push_back(c.size());
    return out;
  }
};

inline UePlacement sample_ue_positions(const WorldConfig& config, RandomStream& rng) {
  const double h = config.ue_half_width();
  std::uniform_real_distribution<double> coord(-h, h);
  UePlacement out;
  out.positions.reserve(config.num_ues);
  for (std::size_t i = 0; i < config.num_ues; ++i) {
    const double x = coord(rng);
    const double y = coord(rng);
    out.positions.push_back({x, y});
  }
  return out;
}

/// Homogeneous Poisson point process on [-(L+R)/2, (L+R)/2]^2: a Poisson
/// count followed by i.i.d. uniform placement.
inline PointCloud sample_hppp(const WorldConfig& config, RandomStream& rng) {
  PointCloud out;
  const double mean = config.intensity * config.data_area();
  if (mean <= 0.0) return out;

  std::poisson_distribution<std::int64_t> count_dist(mean);
  const auto count = static_cast<std::size_t>(count_dist(rng));

  const double h = config.data_half_width();
  std::uniform_real_distribution<double> coord(-h, h);
  out.positions.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = coord(rng);
    const double y = coord(rng);
    out.positions.push_back({x, y});
  }
  return out;
}

/// Capture lists for every UE, sorted ascending. Points are bucketed on a grid
/// with cell size R so each UE only scans the 3x3 neighbourhood of its cell.
inline CaptureLists assign_points_to_ues(const UePlacement& ues, const PointCloud& points,
                                         double radius) {
  CaptureLists lists(ues.positions.size());
  if (points.positions.empty() || ues.positions.empty()) return lists;

  double min_x = points.positions.front().x;
  double min_y = points.positions.front().y;
  double max_x = min_x;
  double max_y = min_y;
  for (const auto& p : points.positions) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double cell = radius;
  const auto nx = static_cast<std::size_t>(std::floor((max_x - min_x) / cell)) + 1;
  const auto ny = static_cast<std::size_t>(std::floor((max_y - min_y) / cell)) + 1;

  auto cell_of = [&](double v, double lo, std::size_t n) -> std::ptrdiff_t {
    auto c = static_cast<std::ptrdiff_t>(std::floor((v - lo) / cell));
    return std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(n) - 1);
  };

  // Counting sort of point indices into cells keeps each bucket ascending.
  std::vector<std::size_t> cell_start(nx * ny + 1, 0);
  std::vector<std::size_t> point_cell(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto cx = static_cast<std::size_t>(cell_of(points.positions[i].x, min_x, nx));
    const auto cy = static_cast<std::size_t>(cell_of(points.positions[i].y, min_y, ny));
    point_cell[i] = cy * nx + cx;
    ++cell_start[point_cell[i] + 1];
  }
  for (std::size_t c = 0; c < nx * ny; ++c) cell_start[c + 1] += cell_start[c];
  std::vector<std::size_t> bucket(points.size());
  {
    std::vector<std::size_t> fill(cell_start.begin(), cell_start.end() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) bucket[fill[point_cell[i]]++] = i;
  }

  for (std::size_t k = 0; k < ues.positions.size(); ++k) {
    const Vec2 z = ues.positions[k];
    const auto cx = static_cast<std::ptrdiff_t>(std::floor((z.x - min_x) / cell));
    const auto cy = static_cast<std::ptrdiff_t>(std::floor((z.y - min_y) / cell));
    auto& out = lists[k];
    for (std::ptrdiff_t gy = cy - 1; gy <= cy + 1; ++gy) {
      if (gy < 0 || gy >= static_cast<std::ptrdiff_t>(ny)) continue;
      for (std::ptrdiff_t gx = cx - 1; gx <= cx + 1; ++gx) {
        if (gx < 0 || gx >= static_cast<std::ptrdiff_t>(nx)) continue;
        const auto c = static_cast<std::size_t>(gy) * nx + static_cast<std::size_t>(gx);
        for (std::size_t b = cell_start[c]; b < cell_start[c + 1]; ++b) {
          const std::size_t idx = bucket[b];
          if (within_radius(z, points.positions[idx], radius)) out.push_back(idx);
        }
      }
    }
    std::sort(out.begin(), out.end());
  }
  return lists;
}

/// Expected per-UE sample count, lambda * pi * R^2.
[[nodiscard]] constexpr double expected_samples(double intensity, double radius) noexcept {
  return intensity * std::numbers::pi * radius * radius;
}

/// Area of the lens formed by two radius-R discs whose centres are d apart.
[[nodiscard]] inline double circle_intersection_area(double d, double radius) noexcept {
  if (d >= 2.0 * radius) return 0.0;
  const double r2 = radius * radius;
  return 2.0 * r2 * std::acos(d / (2.0 * radius)) - (d / 2.0) * std::sqrt(4.0 * r2 - d * d);
}

inline void label_points_iid(PointCloud& points, std::size_t num_classes, RandomStream& rng) {
  std::uniform_int_distribution<int> label(0, static_cast<int>(num_classes) - 1);
  points.labels.resize(points.size());
  for (auto& l : points.labels) l = label(rng);
}

/// Strip index of an x coordinate: [-(L+R)/2, (L+R)/2] is cut into
/// num_classes equal vertical strips, numbered left to right. Anything left
/// or right of that band (the outer part of a full margin, or the exact right
/// edge) is clamped into the first or last strip.
[[nodiscard]] inline int region_label(double x, const WorldConfig& world) noexcept {
  const double half = (world.side_length + world.sensing_radius) / 2.0;
  const double width = 2.0 * half / static_cast<double>(world.num_classes);
  const auto strip = static_cast<long long>(std::floor((x + half) / width));
  return static_cast<int>(
      std::clamp<long long>(strip, 0, static_cast<long long>(world.num_classes) - 1));
}

inline void label_points_region(PointCloud& points, const WorldConfig& world) {
  points.labels.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    points.labels[i] = region_label(points.positions[i].x, world);
  }
}

/// Builds a complete labeled partition from (world, labeling). Each stage
/// draws from its own stream derived from world.seed.
inline SpatialPartition make_partition(const WorldConfig& world, Labeling labeling) {
  world.validate();
  SpatialPartition part;
  part.world = world;
  part.labeling = labeling;

  auto ue_rng = make_stream(world.seed, StreamTag::ue_placement);
  part.ues = sample_ue_positions(world, ue_rng);

  auto pp_rng = make_stream(world.seed, StreamTag::point_process);
  part.points = sample_hppp(world, pp_rng);

  if (labeling == Labeling::iid) {
    auto label_rng = make_stream(world.seed, StreamTag::labeling);
    label_points_iid(part.points, world.num_classes, label_rng);
  } else {
    label_points_region(part.points, world);
  }
  part.capture_lists = assign_points_to_ues(part.ues, part.points, world.sensing_radius);
  return part;
}

// ---------------------------------------------------------------------------
// JSON export

inline nlohmann::json world_to_json(const WorldConfig& w) {
  return nlohmann::json{{"side_length", w.side_length},
                        {"sensing_radius", w.sensing_radius},
                        {"intensity", w.intensity},
                        {"num_ues", w.num_ues},
                        {"num_classes", w.num_classes},
                        {"data_margin", to_string(w.data_margin)}};
}

inline nlohmann::json partition_to_json(const SpatialPartition& p) {
  nlohmann::json ues = nlohmann::json::array();
  for (const auto& z : p.ues.positions) ues.push_back({z.x, z.y});
  nlohmann::json pos = nlohmann::json::array();
  for (const auto& q : p.points.positions) pos.push_back({q.x, q.y});
  return nlohmann::json{{"seed", p.world.seed},
                        {"world", world_to_json(p.world)},
                        {"labeling", to_string(p.labeling)},
                        {"ues", std::move(ues)},
                        {"points", {{"positions", std::move(pos)}, {"labels", p.points.labels}}},
                        {"capture_lists", p.capture_lists}};
}

inline SpatialPartition partition_from_json(const nlohmann::json& j) {
  try {
    SpatialPartition p;
    const auto& w = j.at("world");
    p.world.side_length = w.at("side_length").get<double>();
    p.world.sensing_radius = w.at("sensing_radius").get<double>();
    p.world.intensity = w.at("intensity").get<double>();
    p.world.num_ues = w.at("num_ues").get<std::size_t>();
    p.world.num_classes = w.at("num_classes").get<std::size_t>();
    if (w.contains("data_margin")) {
      p.world.data_margin = parse_data_margin(w.at("data_margin").get<std::string>());
    }
    p.world.seed = j.at("seed").get<std::uint64_t>();
    p.world.validate();
    p.labeling = parse_labeling(j.at("labeling").get<std::string>());
    for (const auto& z : j.at("ues")) p.ues.positions.push_back({z.at(0).get<double>(), z.at(1).get<double>()});
    for (const auto& q : j.at("points").at("positions")) {
      p.points.positions.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
    }
    p.points.labels = j.at("points").at("labels").get<std::vector<int>>();
    p.capture_lists = j.at("capture_lists").get<CaptureLists>();
    if (p.ues.positions.size() != p.world.num_ues || p.capture_lists.size() != p.world.num_ues) {
      throw DataError("partition: UE count does not match world.num_ues");
    }
    if (!p.points.labeled()) throw DataError("partition: points and labels differ in length");
    for (const auto& list : p.capture_lists) {
      for (const auto idx : list) {
        if (idx >= p.points.size()) throw DataError("partition: capture index out of range");
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("partition JSON: ") + e.what());
  }
}

}  // namespace geofl
