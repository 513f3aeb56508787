#pragma once

// Metrics trace CSV:
//   round,policy,seed,selected_count,distinct_labels,train_loss,test_accuracy,wall_time_s

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "geofl/errors.hpp"
#include "geofl/fedavg.hpp"

namespace geofl {

inline constexpr std::string_view metrics_header =
    "round,policy,seed,selected_count,distinct_labels,train_loss,test_accuracy,wall_time_s";

struct MetricsRow {
  std::size_t round = 0;
  std::string policy;
  std::uint64_t seed = 0;
  std::size_t selected_count = 0;
  std::size_t distinct_labels = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_time = 0.0;
};

namespace detail {

inline std::string format_real(double v, const char* fmt = "%.17g") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  if (s == "nan" && std::is_floating_point_v<T>) return static_cast<T>(NAN);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("metrics CSV: bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

inline void write_metrics_header(std::ostream& os) { os << metrics_header << '\n'; }

inline void write_metrics_row(std::ostream& os, const RoundRecord& r, std::uint64_t seed) {
  os << r.round << ',' << to_string(r.policy) << ',' << seed << ',' << r.selected.indices.size()
     << ',' << r.distinct_labels << ',' << detail::format_real(r.train_loss) << ','
     << detail::format_real(r.test_accuracy) << ',' << detail::format_real(r.wall_time, "%.6f")
     << '\n';
}

inline MetricsRow parse_metrics_row(std::string_view line) {
  const auto f = detail::split(line, ',');
  if (f.size() != 8) {
    throw DataError("metrics CSV: expected 8 fields, got " + std::to_string(f.size()));
  }
  MetricsRow r;
  r.round = detail::parse_number<std::size_t>(f[0], "round");
  r.policy = std::string(f[1]);
  if (r.policy != "cluster" && r.policy != "random") {
    throw DataError("metrics CSV: unknown policy '" + r.policy + "'");
  }
  r.seed = detail::parse_number<std::uint64_t>(f[2], "seed");
  r.selected_count = detail::parse_number<std::size_t>(f[3], "selected_count");
  r.distinct_labels = detail::parse_number<std::size_t>(f[4], "distinct_labels");
  r.train_loss = detail::parse_number<double>(f[5], "train_loss");
  r.test_accuracy = detail::parse_number<double>(f[6], "test_accuracy");
  r.wall_time = detail::parse_number<double>(f[7], "wall_time_s");
  if (!(r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0)) {
    throw DataError("metrics CSV: test_accuracy outside [0,1]");
  }
  return r;
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != metrics_header) {
    throw DataError("metrics CSV: missing or unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return read_metrics_csv(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace geofl
