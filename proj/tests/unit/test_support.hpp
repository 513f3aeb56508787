#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "geofl/learner.hpp"

namespace geofl::testing {

/// n rows of uniform [0,1] features with uniform labels in [0, classes).
inline ClientDataset<double> random_samples(std::size_t dim, std::size_t classes, std::size_t n,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> y(0, static_cast<int>(classes) - 1);
  auto s = std::make_shared<LabeledSamples<double>>();
  s->cols = dim;
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = u(rng);
    s->push_back(x, y(rng));
  }
  return ClientDataset<double>::whole(s);
}

/// Central-difference gradient of the mean loss, computed through evaluate()
/// only (no backward pass involved).
inline std::vector<double> numeric_gradient(const ModelParams<double>& p,
                                            const ClientDataset<double>& data, double h) {
  std::vector<double> g(p.size());
  auto probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + h;
    const double up = evaluate(probe, data).loss;
    probe.values[i] = orig - h;
    const double down = evaluate(probe, data).loss;
    probe.values[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6).
inline double max_relative_gradient_error(const ModelParams<double>& p,
                                          const ClientDataset<double>& data,
                                          const std::vector<double>& analytic, double h) {
  const auto numeric = numeric_gradient(p, data, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("geofl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void put_be32(std::ofstream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

/// Writes an IDX image file (magic 2051) and label file (magic 2049).
inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      std::size_t rows, std::size_t cols,
                      const std::vector<std::vector<unsigned char>>& pixels,
                      const std::vector<unsigned char>& ys, std::uint32_t image_magic = 2051,
                      std::uint32_t label_magic = 2049) {
  std::ofstream im(images, std::ios::binary);
  put_be32(im, image_magic);
  put_be32(im, static_cast<std::uint32_t>(pixels.size()));
  put_be32(im, static_cast<std::uint32_t>(rows));
  put_be32(im, static_cast<std::uint32_t>(cols));
  for (const auto& p : pixels) im.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size()));
  std::ofstream lb(labels, std::ios::binary);
  put_be32(lb, label_magic);
  put_be32(lb, static_cast<std::uint32_t>(ys.size()));
  lb.write(reinterpret_cast<const char*>(ys.data()), static_cast<std::streamsize>(ys.size()));
}

/// Writes CIFAR-10 binary records: label byte + 3072 pixel bytes each.
inline void write_cifar(const std::filesystem::path& path, const std::vector<unsigned char>& ys,
                        unsigned char fill = 0) {
  std::ofstream os(path, std::ios::binary);
  std::vector<char> pix(3072);
  for (std::size_t r = 0; r < ys.size(); ++r) {
    os.put(static_cast<char>(ys[r]));
    for (std::size_t i = 0; i < pix.size(); ++i) {
      pix[i] = static_cast<char>((i + r + fill) % 256);
    }
    os.write(pix.data(), static_cast<std::streamsize>(pix.size()));
  }
}

}  // namespace geofl::testing
