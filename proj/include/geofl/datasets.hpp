#pragma once

// Source datasets and their binding onto labeled spatial points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "geofl/errors.hpp"
#include "geofl/learner.hpp"
#include "geofl/rng.hpp"
#include "geofl/spatial_partition.hpp"

namespace geofl {

inline constexpr std::uint32_t idx_images_magic = 2051;
inline constexpr std::uint32_t idx_labels_magic = 2049;
inline constexpr std::size_t cifar10_record_bytes = 3073;
inline constexpr std::size_t cifar10_pixels = 3072;

template <class Real = double>
struct SourceDataset {
  std::shared_ptr<const LabeledSamples<Real>> train;
  std::shared_ptr<const LabeledSamples<Real>> test;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> per_class_index;  // train rows by class

  [[nodiscard]] std::size_t feature_dim() const noexcept { return train ? train->cols : 0; }
};

template <class Real>
SourceDataset<Real> make_source(LabeledSamples<Real> train, LabeledSamples<Real> test,
                                std::size_t num_classes) {
  if (train.rows() == 0) throw DataError("training set is empty");
  if (test.rows() != 0 && test.cols != train.cols) {
    throw DataError("train and test feature dimensions differ");
  }
  SourceDataset<Real> src;
  src.num_classes = num_classes;
  src.per_class_index.assign(num_classes, {});
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const int y = train.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("train label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    src.per_class_index[static_cast<std::size_t>(y)].push_back(i);
  }
  for (const int y : test.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("test label " + std::to_string(y) + " out of range");
    }
  }
  src.train = std::make_shared<const LabeledSamples<Real>>(std::move(train));
  src.test = std::make_shared<const LabeledSamples<Real>>(std::move(test));
  return src;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24U) | (std::uint32_t{b[off + 1]} << 16U) |
         (std::uint32_t{b[off + 2]} << 8U) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

/// Parses an IDX image/label file pair (big-endian headers). Pixels are
/// scaled by 1/255.
template <class Real = double>
LabeledSamples<Real> load_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  if (img.size() < 16) throw DataError(images_path.string() + ": truncated IDX header");
  if (detail::read_be32(img, 0) != idx_images_magic) {
    throw DataError(images_path.string() + ": bad IDX image magic " +
                    std::to_string(detail::read_be32(img, 0)) + " (expected 2051)");
  }
  if (lab.size() < 8) throw DataError(labels_path.string() + ": truncated IDX header");
  if (detail::read_be32(lab, 0) != idx_labels_magic) {
    throw DataError(labels_path.string() + ": bad IDX label magic " +
                    std::to_string(detail::read_be32(lab, 0)) + " (expected 2049)");
  }

  const std::size_t count = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t label_count = detail::read_be32(lab, 4);
  if (count != label_count) {
    throw DataError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                    std::to_string(label_count) + " labels");
  }
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + count * dim) throw DataError(images_path.string() + ": truncated pixel data");
  if (lab.size() < 8 + count) throw DataError(labels_path.string() + ": truncated label data");

  LabeledSamples<Real> out;
  out.cols = dim;
  out.values.resize(count * dim);
  out.labels.resize(count);
  for (std::size_t i = 0; i < count * dim; ++i) {
    out.values[i] = static_cast<Real>(img[16 + i]) / Real{255};
  }
  for (std::size_t i = 0; i < count; ++i) out.labels[i] = lab[8 + i];
  return out;
}

/// Concatenates CIFAR-10 binary batches: 3073-byte records of one label
/// byte followed by 3072 channel-major pixels.
template <class Real = double>
LabeledSamples<Real> load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
  if (batch_paths.empty()) throw DataError("CIFAR-10: empty batch list");
  LabeledSamples<Real> out;
  out.cols = cifar10_pixels;
  for (const auto& path : batch_paths) {
    const auto bytes = detail::read_file(path);
    if (bytes.size() % cifar10_record_bytes != 0) {
      throw DataError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 3073");
    }
    const std::size_t n = bytes.size() / cifar10_record_bytes;
    out.values.reserve(out.values.size() + n * cifar10_pixels);
    for (std::size_t r = 0; r < n; ++r) {
      const unsigned char* rec = bytes.data() + r * cifar10_record_bytes;
      if (rec[0] > 9) {
        throw DataError(path.string() + ": record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
      }
      out.labels.push_back(rec[0]);
      for (std::size_t p = 0; p < cifar10_pixels; ++p) {
        out.values.push_back(static_cast<Real>(rec[1 + p]) / Real{255});
      }
    }
  }
  return out;
}

struct BlobSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t dim = 32;
  double separation = 0.6;  // minimum pairwise distance between class centres
  double sigma = 0.1;       // per-coordinate standard deviation

  friend bool operator==(const BlobSpec&, const BlobSpec&) = default;
};

/// Gaussian class blobs in [0,1]^dim. Centres are drawn from [0.15, 0.85]^dim
/// by rejection until pairwise distances reach the separation; samples are
/// clipped to [0,1].
template <class Real = double>
SourceDataset<Real> synthetic_blobs(const BlobSpec& spec, RandomStream& rng) {
  if (spec.num_classes < 1 || spec.samples_per_class < 1 || spec.dim < 1) {
    throw ConfigError("synthetic blobs: counts must be at least 1");
  }
  if (!(spec.sigma >= 0.0) || !(spec.separation >= 0.0)) {
    throw ConfigError("synthetic blobs: sigma and separation must be non-negative");
  }
  std::uniform_real_distribution<double> centre_coord(0.15, 0.85);
  std::vector<std::vector<double>> centres;
  std::size_t attempts = 0;
  while (centres.size() < spec.num_classes) {
    if (++attempts > 100000) {
      throw ConfigError("synthetic blobs: cannot place centres with the requested separation");
    }
    std::vector<double> c(spec.dim);
    for (auto& v : c) v = centre_coord(rng);
    bool ok = true;
    for (const auto& other : centres) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < spec.dim; ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
      if (std::sqrt(d2) < spec.separation) {
        ok = false;
        break;
      }
    }
    if (ok) centres.push_back(std::move(c));
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&](std::size_t per_class) {
    LabeledSamples<Real> s;
    s.cols = spec.dim;
    std::vector<Real> x(spec.dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t n = 0; n < per_class; ++n) {
        for (std::size_t i = 0; i < spec.dim; ++i) {
          x[i] = static_cast<Real>(std::clamp(centres[c][i] + spec.sigma * noise(rng), 0.0, 1.0));
        }
        s.push_back(x, static_cast<int>(c));
      }
    }
    return s;
  };
  auto train = draw(spec.samples_per_class);
  auto test = draw(spec.test_per_class);
  return make_source(std::move(train), std::move(test), spec.num_classes);
}

/// Maps every point to a train row of the point's class, drawn uniformly with
/// replacement. All UEs capturing a point share its row.
template <class Real>
std::vector<std::size_t> bind_points(const SpatialPartition& partition,
                                     const SourceDataset<Real>& source, RandomStream& rng) {
  const auto& pts = partition.points;
  if (!pts.labeled()) throw ConfigError("bind_points: partition is not labeled");
  std::vector<std::size_t> binding(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto y = static_cast<std::size_t>(pts.labels[i]);
    if (y >= source.per_class_index.size() || source.per_class_index[y].empty()) {
      throw DataError("bind_points: class " + std::to_string(y) + " has no training samples");
    }
    const auto& rows = source.per_class_index[y];
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    binding[i] = rows[pick(rng)];
  }
  return binding;
}

/// Everything a federation needs: one dataset per UE plus the held-out test set.
template <class Real = double>
struct FederatedData {
  SourceDataset<Real> source;
  std::vector<std::size_t> binding;
  std::vector<ClientDataset<Real>> clients;
  ClientDataset<Real> test;

  [[nodiscard]] std::size_t num_clients() const noexcept { return clients.size(); }
};

template <class Real>
FederatedData<Real> make_federated_data(const SpatialPartition& partition,
                                        SourceDataset<Real> source, std::uint64_t seed) {
  FederatedData<Real> fd;
  auto rng = make_stream(seed, StreamTag::binding);
  fd.binding = bind_points(partition, source, rng);
  fd.clients.reserve(partition.capture_lists.size());
  for (const auto& captured : partition.capture_lists) {
    std::vector<std::size_t> rows;
    rows.reserve(captured.size());
    for (const auto p : captured) rows.push_back(fd.binding[p]);
    fd.clients.emplace_back(source.train, std::move(rows));
  }
  fd.test = ClientDataset<Real>::whole(source.test);
  fd.source = std::move(source);
  return fd;
}

/// Number of distinct labels across the given clients' data.
template <class Real>
std::size_t distinct_labels(const std::vector<ClientDataset<Real>>& clients,
                            const std::vector<std::size_t>& which, std::size_t num_classes) {
  std::vector<bool> seen(num_classes, false);
  std::size_t n = 0;
  for (const auto k : which) {
    const auto& c = clients[k];
    for (std::size_t i = 0; i < c.size() && n < num_classes; ++i) {
      const auto y = static_cast<std::size_t>(c.label(i));
      if (!seen[y]) {
        seen[y] = true;
        ++n;
      }
    }
  }
  return n;
}

}  // namespace geofl
