#pragma once

// Experiment driver behind the command-line tool: JSON configuration,
// partition materialization, paired policy training runs, and trace
// comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofl/checkpoint.hpp"
#include "geofl/clustering.hpp"
#include "geofl/datasets.hpp"
#include "geofl/errors.hpp"
#include "geofl/fedavg.hpp"
#include "geofl/learner.hpp"
#include "geofl/metrics_csv.hpp"
#include "geofl/selection.hpp"
#include "geofl/spatial_partition.hpp"

namespace geofl {

namespace fs = std::filesystem;

enum class DatasetKind { synthetic, fmnist, cifar10 };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  BlobSpec blobs;
  // fmnist
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10
  std::vector<std::string> train_batches, test_batches;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct FederationSettings {
  std::size_t rounds = 500;
  double learning_rate = 0.001;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  std::size_t eval_every = 1;
  std::size_t hidden_dim = 200;
  bool with_bias = true;
  bool population_train_loss = false;
  std::size_t threads = 0;
  std::size_t checkpoint_every = 50;

  friend bool operator==(const FederationSettings&, const FederationSettings&) = default;
};

/// Grid over population size K and cluster count N_c. Empty lists keep the
/// base value.
struct SweepConfig {
  std::vector<std::size_t> num_ues;
  std::vector<std::size_t> clusters;

  [[nodiscard]] bool empty() const noexcept { return num_ues.empty() && clusters.empty(); }
  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct ExperimentConfig {
  WorldConfig world;  // world.seed is ignored; each repeat derives its own
  Labeling labeling = Labeling::region;
  DatasetConfig dataset;
  std::size_t clusters = 5;  // N_c = N_u
  FederationSettings federation;
  std::vector<PolicyKind> policies{PolicyKind::cluster, PolicyKind::random};
  std::size_t repeats = 3;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  std::string precision = "f64";
  bool record_wall_time = false;
  bool selection_trace = false;
  std::string partition_file;  // optional: fixed world shared by all repeats
  SweepConfig sweep;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.world.side_length == b.world.side_length &&
           a.world.sensing_radius == b.world.sensing_radius &&
           a.world.intensity == b.world.intensity && a.world.num_ues == b.world.num_ues &&
           a.world.num_classes == b.world.num_classes &&
           a.world.data_margin == b.world.data_margin && a.labeling == b.labeling &&
           a.dataset == b.dataset && a.clusters == b.clusters && a.federation == b.federation &&
           a.policies == b.policies && a.repeats == b.repeats && a.output_dir == b.output_dir &&
           a.seed == b.seed && a.precision == b.precision &&
           a.record_wall_time == b.record_wall_time && a.selection_trace == b.selection_trace &&
           a.partition_file == b.partition_file && a.sweep == b.sweep;
  }

  void validate() const {
    world.validate();
    if (clusters < 1) throw ConfigError("clusters must be at least 1");
    if (clusters > world.num_ues) {
      throw ConfigError("clusters (" + std::to_string(clusters) + ") exceed num_ues (" +
                        std::to_string(world.num_ues) + ")");
    }
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
    if (!sweep.empty() && !partition_file.empty()) {
      throw ConfigError("sweep and partition_file cannot be combined");
    }
    for (const auto k : sweep.num_ues.empty() ? std::vector<std::size_t>{world.num_ues} : sweep.num_ues) {
      for (const auto n : sweep.clusters.empty() ? std::vector<std::size_t>{clusters} : sweep.clusters) {
        if (k < 1 || n < 1 || n > k) {
          throw ConfigError("sweep point K=" + std::to_string(k) + ", N_c=" + std::to_string(n) +
                            " needs 1 <= N_c <= K");
        }
      }
    }
    if (policies.empty()) throw ConfigError("at least one policy is required");
    if (std::set<PolicyKind>(policies.begin(), policies.end()).size() != policies.size()) {
      throw ConfigError("policies must not repeat");
    }
    if (precision != "f64" && precision != "f32") {
      throw ConfigError("precision must be f64 or f32");
    }
    if (federation.rounds < 1) throw ConfigError("federation.rounds must be at least 1");
    if (federation.eval_every < 1) throw ConfigError("federation.eval_every must be at least 1");
    if (federation.checkpoint_every < 1) {
      throw ConfigError("federation.checkpoint_every must be at least 1");
    }
    if (federation.hidden_dim < 1) throw ConfigError("federation.hidden_dim must be at least 1");
    TrainSpec{federation.learning_rate, federation.local_epochs, federation.batch_size}.validate();
    if (dataset.kind == DatasetKind::synthetic && dataset.blobs.num_classes != world.num_classes) {
      throw ConfigError("synthetic dataset classes must equal world.num_classes");
    }
    if (dataset.kind != DatasetKind::synthetic && world.num_classes != 10) {
      throw ConfigError("FMNIST and CIFAR-10 have 10 classes; set world.num_classes = 10");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (allowed.count(key) == 0) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::require_keys;
  ExperimentConfig c;
  require_keys(j,
               {"world", "labeling", "dataset", "clusters", "federation", "policies", "repeats",
                "output_dir", "seed", "precision", "record_wall_time", "selection_trace",
                "partition_file", "sweep"},
               "config");
  if (j.contains("world")) {
    const auto& w = j.at("world");
    require_keys(w,
                 {"side_length", "sensing_radius", "intensity", "num_ues", "num_classes",
                  "data_margin"},
                 "world");
    read_opt(w, "side_length", c.world.side_length, "world");
    read_opt(w, "sensing_radius", c.world.sensing_radius, "world");
    read_opt(w, "intensity", c.world.intensity, "world");
    read_opt(w, "num_ues", c.world.num_ues, "world");
    read_opt(w, "num_classes", c.world.num_classes, "world");
    if (w.contains("data_margin")) {
      std::string m;
      read_opt(w, "data_margin", m, "world");
      c.world.data_margin = parse_data_margin(m);
    }
  }
  if (j.contains("labeling")) {
    std::string s;
    read_opt(j, "labeling", s, "config");
    c.labeling = parse_labeling(s);
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    std::string kind = "synthetic";
    if (d.is_object()) read_opt(d, "kind", kind, "dataset");
    if (kind == "synthetic") {
      c.dataset.kind = DatasetKind::synthetic;
      require_keys(d,
                   {"kind", "samples_per_class", "test_per_class", "dim", "separation", "sigma",
                    "num_classes"},
                   "dataset");
      c.dataset.blobs.num_classes = c.world.num_classes;
      read_opt(d, "num_classes", c.dataset.blobs.num_classes, "dataset");
      read_opt(d, "samples_per_class", c.dataset.blobs.samples_per_class, "dataset");
      read_opt(d, "test_per_class", c.dataset.blobs.test_per_class, "dataset");
      read_opt(d, "dim", c.dataset.blobs.dim, "dataset");
      read_opt(d, "separation", c.dataset.blobs.separation, "dataset");
      read_opt(d, "sigma", c.dataset.blobs.sigma, "dataset");
    } else if (kind == "fmnist") {
      c.dataset.kind = DatasetKind::fmnist;
      require_keys(d, {"kind", "train_images", "train_labels", "test_images", "test_labels"},
                   "dataset");
      for (const char* k : {"train_images", "train_labels", "test_images", "test_labels"}) {
        if (!d.contains(k)) throw ConfigError(std::string("dataset.") + k + " is required");
      }
      read_opt(d, "train_images", c.dataset.train_images, "dataset");
      read_opt(d, "train_labels", c.dataset.train_labels, "dataset");
      read_opt(d, "test_images", c.dataset.test_images, "dataset");
      read_opt(d, "test_labels", c.dataset.test_labels, "dataset");
    } else if (kind == "cifar10") {
      c.dataset.kind = DatasetKind::cifar10;
      require_keys(d, {"kind", "train_batches", "test_batches"}, "dataset");
      if (!d.contains("train_batches")) throw ConfigError("dataset.train_batches is required");
      read_opt(d, "train_batches", c.dataset.train_batches, "dataset");
      read_opt(d, "test_batches", c.dataset.test_batches, "dataset");
    } else {
      throw ConfigError("unknown dataset kind '" + kind + "'");
    }
  } else {
    c.dataset.blobs.num_classes = c.world.num_classes;
  }
  read_opt(j, "clusters", c.clusters, "config");
  if (j.contains("federation")) {
    const auto& f = j.at("federation");
    require_keys(f,
                 {"rounds", "learning_rate", "local_epochs", "batch_size", "eval_every",
                  "hidden_dim", "with_bias", "population_train_loss", "threads",
                  "checkpoint_every"},
                 "federation");
    auto& s = c.federation;
    read_opt(f, "rounds", s.rounds, "federation");
    read_opt(f, "learning_rate", s.learning_rate, "federation");
    read_opt(f, "local_epochs", s.local_epochs, "federation");
    read_opt(f, "batch_size", s.batch_size, "federation");
    read_opt(f, "eval_every", s.eval_every, "federation");
    read_opt(f, "hidden_dim", s.hidden_dim, "federation");
    read_opt(f, "with_bias", s.with_bias, "federation");
    read_opt(f, "population_train_loss", s.population_train_loss, "federation");
    read_opt(f, "threads", s.threads, "federation");
    read_opt(f, "checkpoint_every", s.checkpoint_every, "federation");
  }
  if (j.contains("policies")) {
    std::vector<std::string> names;
    read_opt(j, "policies", names, "config");
    c.policies.clear();
    for (const auto& n : names) c.policies.push_back(parse_policy_kind(n));
  }
  read_opt(j, "repeats", c.repeats, "config");
  read_opt(j, "output_dir", c.output_dir, "config");
  read_opt(j, "seed", c.seed, "config");
  read_opt(j, "precision", c.precision, "config");
  read_opt(j, "record_wall_time", c.record_wall_time, "config");
  read_opt(j, "selection_trace", c.selection_trace, "config");
  read_opt(j, "partition_file", c.partition_file, "config");
  if (j.contains("sweep")) {
    const auto& sw = j.at("sweep");
    require_keys(sw, {"num_ues", "clusters"}, "sweep");
    read_opt(sw, "num_ues", c.sweep.num_ues, "sweep");
    read_opt(sw, "clusters", c.sweep.clusters, "sweep");
  }
  c.validate();
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json d;
  switch (c.dataset.kind) {
    case DatasetKind::synthetic:
      d = {{"kind", "synthetic"},
           {"num_classes", c.dataset.blobs.num_classes},
           {"samples_per_class", c.dataset.blobs.samples_per_class},
           {"test_per_class", c.dataset.blobs.test_per_class},
           {"dim", c.dataset.blobs.dim},
           {"separation", c.dataset.blobs.separation},
           {"sigma", c.dataset.blobs.sigma}};
      break;
    case DatasetKind::fmnist:
      d = {{"kind", "fmnist"},
           {"train_images", c.dataset.train_images},
           {"train_labels", c.dataset.train_labels},
           {"test_images", c.dataset.test_images},
           {"test_labels", c.dataset.test_labels}};
      break;
    case DatasetKind::cifar10:
      d = {{"kind", "cifar10"},
           {"train_batches", c.dataset.train_batches},
           {"test_batches", c.dataset.test_batches}};
      break;
  }
  const auto& f = c.federation;
  std::vector<std::string> policies;
  for (const auto p : c.policies) policies.emplace_back(to_string(p));
  nlohmann::json j = {
      {"world", world_to_json(c.world)},
      {"labeling", to_string(c.labeling)},
      {"dataset", d},
      {"clusters", c.clusters},
      {"federation",
       {{"rounds", f.rounds},
        {"learning_rate", f.learning_rate},
        {"local_epochs", f.local_epochs},
        {"batch_size", f.batch_size},
        {"eval_every", f.eval_every},
        {"hidden_dim", f.hidden_dim},
        {"with_bias", f.with_bias},
        {"population_train_loss", f.population_train_loss},
        {"threads", f.threads},
        {"checkpoint_every", f.checkpoint_every}}},
      {"policies", policies},
      {"repeats", c.repeats},
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"precision", c.precision},
      {"record_wall_time", c.record_wall_time},
      {"selection_trace", c.selection_trace},
  };
  if (!c.partition_file.empty()) j["partition_file"] = c.partition_file;
  if (!c.sweep.empty()) j["sweep"] = {{"num_ues", c.sweep.num_ues}, {"clusters", c.sweep.clusters}};
  return j;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Shared pieces

/// Seed used by repeat r: base seed + r.
[[nodiscard]] inline std::uint64_t repeat_seed(const ExperimentConfig& c, std::size_t r) noexcept {
  return c.seed + r;
}

inline SpatialPartition partition_for_repeat(const ExperimentConfig& c, std::size_t r) {
  if (!c.partition_file.empty()) {
    std::ifstream is(c.partition_file);
    if (!is) throw ConfigError("cannot open partition file " + c.partition_file);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(c.partition_file + ": " + e.what());
    }
    return partition_from_json(j);
  }
  WorldConfig w = c.world;
  w.seed = repeat_seed(c, r);
  return make_partition(w, c.labeling);
}

template <class Real>
SourceDataset<Real> load_source(const DatasetConfig& d, std::uint64_t seed) {
  switch (d.kind) {
    case DatasetKind::synthetic: {
      auto rng = make_stream(seed, StreamTag::dataset);
      return synthetic_blobs<Real>(d.blobs, rng);
    }
    case DatasetKind::fmnist:
      return make_source(load_idx<Real>(d.train_images, d.train_labels),
                         load_idx<Real>(d.test_images, d.test_labels), 10);
    case DatasetKind::cifar10: {
      std::vector<fs::path> train(d.train_batches.begin(), d.train_batches.end());
      std::vector<fs::path> test(d.test_batches.begin(), d.test_batches.end());
      return make_source(load_cifar10<Real>(train),
                         test.empty() ? LabeledSamples<Real>{} : load_cifar10<Real>(test), 10);
    }
  }
  throw ConfigError("unknown dataset kind");
}

inline FederationConfig federation_config(const ExperimentConfig& c, PolicyKind policy,
                                          std::size_t input_dim, std::uint64_t seed) {
  FederationConfig f;
  const auto& s = c.federation;
  f.rounds = s.rounds;
  f.train = TrainSpec{s.learning_rate, s.local_epochs, s.batch_size};
  f.arch = MlpArchitecture{input_dim, s.hidden_dim, c.world.num_classes, s.with_bias};
  f.policy.kind = policy;
  f.policy.participants = c.clusters;
  f.eval_every = s.eval_every;
  f.seed = seed;
  f.population_train_loss = s.population_train_loss;
  f.threads = s.threads;
  f.record_wall_time = c.record_wall_time;
  return f;
}

// ---------------------------------------------------------------------------
// partition

struct PartitionSummary {
  std::size_t num_ues = 0;
  std::size_t num_points = 0;
  double mean_samples = 0.0;
  double expected_samples = 0.0;
  std::size_t min_samples = 0;
  std::size_t max_samples = 0;
  std::size_t empty_ues = 0;
  std::vector<std::pair<std::size_t, std::size_t>> histogram;  // (bin lower edge, count)
  std::vector<std::string> warnings;
};

inline PartitionSummary summarize_partition(const SpatialPartition& p, std::size_t bins = 10) {
  PartitionSummary s;
  const auto counts = p.sample_counts();
  s.num_ues = counts.size();
  s.num_points = p.points.size();
  s.expected_samples = expected_samples(p.world.intensity, p.world.sensing_radius);
  if (!counts.empty()) {
    s.min_samples = *std::min_element(counts.begin(), counts.end());
    s.max_samples = *std::max_element(counts.begin(), counts.end());
    s.mean_samples = std::accumulate(counts.begin(), counts.end(), 0.0) /
                     static_cast<double>(counts.size());
    s.empty_ues = static_cast<std::size_t>(std::count(counts.begin(), counts.end(), 0U));
    const std::size_t span = s.max_samples - s.min_samples + 1;
    const std::size_t width = std::max<std::size_t>(1, (span + bins - 1) / bins);
    for (std::size_t lo = s.min_samples; lo <= s.max_samples; lo += width) {
      s.histogram.emplace_back(lo, 0);
    }
    for (const auto n : counts) ++s.histogram[(n - s.min_samples) / width].second;
  }
  if (p.world.intensity == 0.0) s.warnings.emplace_back("intensity is 0: every capture list is empty");
  else if (s.empty_ues > 0) {
    s.warnings.push_back(std::to_string(s.empty_ues) + " UE(s) captured no data points");
  }
  return s;
}

inline void write_partition_summary(std::ostream& os, const SpatialPartition& p,
                                    const PartitionSummary& s) {
  os << "seed            " << p.world.seed << '\n'
     << "labeling        " << to_string(p.labeling) << '\n'
     << "UEs             " << s.num_ues << '\n'
     << "data points     " << s.num_points << '\n'
     << "mean D_i        " << std::fixed << std::setprecision(2) << s.mean_samples << '\n'
     << "expected D_i    " << s.expected_samples << "  (lambda*pi*R^2)\n"
     << "relative error  " << std::setprecision(4)
     << (s.expected_samples > 0 ? (s.mean_samples - s.expected_samples) / s.expected_samples : 0.0)
     << '\n'
     << "min / max D_i   " << s.min_samples << " / " << s.max_samples << '\n'
     << "histogram of D_i\n";
  for (const auto& [lo, n] : s.histogram) {
    os << "  >= " << std::setw(8) << lo << "  " << n << '\n';
  }
  for (const auto& w : s.warnings) os << "warning: " << w << '\n';
  os.unsetf(std::ios::floatfield);
}

struct PartitionOutput {
  fs::path partition_json;
  fs::path summary_txt;
  PartitionSummary summary;
};

/// Materializes the world for the configured seed and writes
/// partition.json plus partition_summary.txt into out_dir.
inline PartitionOutput cmd_partition(const ExperimentConfig& config, const fs::path& out_dir,
                                     std::ostream& log = std::cerr) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  WorldConfig w = config.world;
  w.seed = config.seed;
  const auto part = make_partition(w, config.labeling);

  PartitionOutput out;
  out.partition_json = out_dir / "partition.json";
  out.summary_txt = out_dir / "partition_summary.txt";
  out.summary = summarize_partition(part);
  {
    std::ofstream os(out.partition_json, std::ios::trunc);
    if (!os) throw DataError("cannot write " + out.partition_json.string());
    os << partition_to_json(part).dump() << '\n';
  }
  {
    std::ofstream os(out.summary_txt, std::ios::trunc);
    if (!os) throw DataError("cannot write " + out.summary_txt.string());
    write_partition_summary(os, part, out.summary);
  }
  for (const auto& warning : out.summary.warnings) log << "warning: " << warning << '\n';
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  // Stop every arm after this many rounds (checkpointed), to be resumed by a
  // later invocation. Unset runs to completion.
  std::optional<std::size_t> stop_after;
};

struct ArmOutput {
  PolicyKind policy = PolicyKind::cluster;
  std::size_t repeat = 0;
  std::size_t num_ues = 0;
  std::size_t clusters = 0;
  fs::path metrics_csv;
  fs::path checkpoint;
  std::size_t rounds_done = 0;
};

[[nodiscard]] inline std::string arm_stem(PolicyKind p, std::size_t repeat) {
  return std::string(to_string(p)) + "_r" + std::to_string(repeat);
}

namespace detail {

// Keeps the header and the rows whose first field (round) is <= max_round.
inline void truncate_trace(const fs::path& path, std::size_t max_round) {
  std::ifstream is(path);
  if (!is) return;
  std::string header;
  std::getline(is, header);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto round = parse_number<std::size_t>(line.substr(0, line.find(',')), "round");
    if (round <= max_round) keep.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  os << header << '\n';
  for (const auto& l : keep) os << l << '\n';
}

template <class Real>
ArmOutput run_arm(const ExperimentConfig& config, const SpatialPartition& part,
                  const FederatedData<Real>& data, PolicyKind policy, std::size_t repeat,
                  const std::optional<ClusterModel>& clusters, const fs::path& out_dir,
                  const TrainOptions& opts) {
  const std::uint64_t seed = repeat_seed(config, repeat);
  auto fed = federation_config(config, policy, data.source.feature_dim(), seed);
  if (policy == PolicyKind::cluster) fed.policy.stored_clusters = clusters;

  ArmOutput arm;
  arm.policy = policy;
  arm.repeat = repeat;
  arm.num_ues = config.world.num_ues;
  arm.clusters = config.clusters;
  const std::string stem = arm_stem(policy, repeat);
  arm.metrics_csv = out_dir / ("metrics_" + stem + ".csv");
  arm.checkpoint = out_dir / ("model_" + stem + ".ckpt");
  const fs::path trace_path = out_dir / ("selection_" + stem + ".csv");

  TrainingHooks<Real> hooks;
  if (fs::exists(arm.checkpoint)) {
    auto ck = load_checkpoint<Real>(arm.checkpoint);
    if (ck.seed != seed || !(ck.params.arch == fed.arch)) {
      throw ConfigError(arm.checkpoint.string() + " was written by a different configuration");
    }
    if (ck.round >= fed.rounds) {
      arm.rounds_done = ck.round;
      return arm;
    }
    truncate_trace(arm.metrics_csv, ck.round);
    if (config.selection_trace) truncate_trace(trace_path, ck.round);
    for (const auto& row : read_metrics_csv(arm.metrics_csv)) {
      RoundRecord r;
      r.round = row.round;
      r.policy = policy;
      r.train_loss = row.train_loss;
      r.test_accuracy = row.test_accuracy;
      r.distinct_labels = row.distinct_labels;
      hooks.records.push_back(std::move(r));
    }
    if (hooks.records.size() != ck.round) {
      throw DataError(arm.metrics_csv.string() + " does not cover the checkpointed rounds");
    }
    hooks.start_round = ck.round;
    hooks.model = std::move(ck.params);
  } else {
    std::ofstream csv(arm.metrics_csv, std::ios::trunc);
    write_metrics_header(csv);
    if (config.selection_trace) {
      std::ofstream tr(trace_path, std::ios::trunc);
      write_selection_header(tr);
    }
  }

  std::ofstream csv(arm.metrics_csv, std::ios::app);
  std::ofstream trace;
  if (config.selection_trace) trace.open(trace_path, std::ios::app);
  if (!csv) throw DataError("cannot write " + arm.metrics_csv.string());

  const std::size_t last_round = opts.stop_after
                                     ? std::min(fed.rounds, hooks.start_round.value_or(0) + *opts.stop_after)
                                     : fed.rounds;
  struct Stop {};
  hooks.on_round = [&](const RoundRecord& rec, const ModelParams<Real>& model) {
    write_metrics_row(csv, rec, seed);
    if (trace.is_open()) write_selection_row(trace, policy, rec.selected);
    arm.rounds_done = rec.round;
    if (rec.round % config.federation.checkpoint_every == 0 || rec.round == last_round) {
      csv.flush();
      if (trace.is_open()) trace.flush();
      save_checkpoint(arm.checkpoint, Checkpoint<Real>{model, seed, rec.round});
    }
    if (rec.round == last_round && last_round < fed.rounds) throw Stop{};
  };
  try {
    run_training(part, data, fed, std::move(hooks));
  } catch (const Stop&) {
  }
  return arm;
}

template <class Real>
std::vector<ArmOutput> train_all(const ExperimentConfig& config, const fs::path& out_dir,
                                 const TrainOptions& opts, std::ostream& log) {
  // Real datasets are loaded once, before any training, so path errors surface early.
  std::optional<SourceDataset<Real>> shared;
  if (config.dataset.kind != DatasetKind::synthetic) {
    shared = load_source<Real>(config.dataset, config.seed);
  }
  std::vector<ArmOutput> arms;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(config, r);
    const auto part = partition_for_repeat(config, r);
    auto source = shared ? *shared : load_source<Real>(config.dataset, seed);
    const auto data = make_federated_data(part, std::move(source), seed);

    std::optional<ClusterModel> clusters;
    if (std::find(config.policies.begin(), config.policies.end(), PolicyKind::cluster) !=
        config.policies.end()) {
      auto rng = make_stream(seed, StreamTag::clustering);
      clusters = kmeans(location_metadata(part.ues), config.clusters, rng);
      std::ofstream os(out_dir / ("clusters_r" + std::to_string(r) + ".json"), std::ios::trunc);
      os << cluster_model_to_json(*clusters).dump() << '\n';
    }
    for (const auto policy : config.policies) {
      log << "repeat " << r << " policy " << to_string(policy) << '\n';
      arms.push_back(run_arm<Real>(config, part, data, policy, r, clusters, out_dir, opts));
    }
  }
  return arms;
}

}  // namespace detail

/// Directory name of one sweep point.
[[nodiscard]] inline std::string sweep_point_name(std::size_t num_ues, std::size_t clusters) {
  return "K" + std::to_string(num_ues) + "_Nc" + std::to_string(clusters);
}

/// Runs every policy x repeat arm. Within a repeat all arms share the world,
/// the point binding and the initial model. Existing checkpoints in out_dir
/// are resumed. With a sweep, each (K, N_c) point runs the same way in its
/// own subdirectory named by sweep_point_name.
inline std::vector<ArmOutput> cmd_train(const ExperimentConfig& config, const fs::path& out_dir,
                                        const TrainOptions& opts = {},
                                        std::ostream& log = std::cerr) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream os(out_dir / "config.json", std::ios::trunc);
    os << experiment_config_to_json(config).dump(2) << '\n';
  }
  auto run = [&](const ExperimentConfig& c, const fs::path& dir) {
    if (c.precision == "f32") return detail::train_all<float>(c, dir, opts, log);
    return detail::train_all<double>(c, dir, opts, log);
  };
  if (config.sweep.empty()) return run(config, out_dir);

  const auto ks = config.sweep.num_ues.empty() ? std::vector<std::size_t>{config.world.num_ues}
                                               : config.sweep.num_ues;
  const auto ns = config.sweep.clusters.empty() ? std::vector<std::size_t>{config.clusters}
                                                : config.sweep.clusters;
  std::vector<ArmOutput> arms;
  for (const auto k : ks) {
    for (const auto n : ns) {
      ExperimentConfig point = config;
      point.sweep = {};
      point.world.num_ues = k;
      point.clusters = n;
      const fs::path dir = out_dir / sweep_point_name(k, n);
      fs::create_directories(dir, ec);
      if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
      log << "sweep point " << sweep_point_name(k, n) << '\n';
      auto part = run(point, dir);
      arms.insert(arms.end(), part.begin(), part.end());
    }
  }
  return arms;
}

// ---------------------------------------------------------------------------
// compare

struct TraceStats {
  std::string path;
  std::string policy;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  double tail_accuracy_variance = 0.0;  // over the last 10% of rounds
};

struct PolicySummary {
  std::string policy;
  std::size_t traces = 0;
  double final_accuracy_mean = 0.0;
  double final_accuracy_std = 0.0;
  double final_loss_mean = 0.0;
  double tail_variance_mean = 0.0;
};

struct Comparison {
  std::vector<TraceStats> traces;
  std::vector<PolicySummary> policies;
  std::optional<double> cluster_minus_random;  // final accuracy gap of the means
};

namespace detail {

inline double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population variance.
inline double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline TraceStats trace_stats(const std::vector<MetricsRow>& rows, std::string path = {}) {
  if (rows.empty()) throw DataError("empty metrics trace " + path);
  TraceStats t;
  t.path = std::move(path);
  t.policy = rows.front().policy;
  t.final_accuracy = rows.back().test_accuracy;
  t.final_loss = rows.back().train_loss;
  const std::size_t tail = std::max<std::size_t>(1, (rows.size() + 9) / 10);
  std::vector<double> acc;
  for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) acc.push_back(rows[i].test_accuracy);
  t.tail_accuracy_variance = detail::variance(acc);
  return t;
}

inline Comparison compare_traces(const std::vector<std::vector<MetricsRow>>& traces,
                                 const std::vector<std::string>& names = {}) {
  if (traces.size() < 2) throw ConfigError("need two policies to compare");
  std::vector<std::size_t> grid;
  for (const auto& r : traces.front()) grid.push_back(r.round);
  Comparison c;
  std::map<std::string, std::vector<TraceStats>> by_policy;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::vector<std::size_t> g;
    for (const auto& r : traces[i]) g.push_back(r.round);
    const std::string name = i < names.size() ? names[i] : "trace " + std::to_string(i);
    if (g != grid) throw ConfigError("round grid of " + name + " does not match the first trace");
    for (const auto& r : traces[i]) {
      if (r.policy != traces[i].front().policy) throw DataError(name + " mixes policies");
    }
    auto t = trace_stats(traces[i], name);
    by_policy[t.policy].push_back(t);
    c.traces.push_back(std::move(t));
  }
  if (by_policy.size() < 2) throw ConfigError("need two policies to compare");
  for (const auto& [policy, ts] : by_policy) {
    PolicySummary s;
    s.policy = policy;
    s.traces = ts.size();
    std::vector<double> acc, loss, var;
    for (const auto& t : ts) {
      acc.push_back(t.final_accuracy);
      loss.push_back(t.final_loss);
      var.push_back(t.tail_accuracy_variance);
    }
    s.final_accuracy_mean = detail::mean(acc);
    s.final_accuracy_std =
        acc.size() > 1 ? std::sqrt(detail::variance(acc) * static_cast<double>(acc.size()) /
                                   static_cast<double>(acc.size() - 1))
                       : 0.0;
    s.final_loss_mean = detail::mean(loss);
    s.tail_variance_mean = detail::mean(var);
    c.policies.push_back(s);
  }
  if (by_policy.count("cluster") != 0 && by_policy.count("random") != 0) {
    double cl = 0.0, rn = 0.0;
    for (const auto& s : c.policies) {
      if (s.policy == "cluster") cl = s.final_accuracy_mean;
      if (s.policy == "random") rn = s.final_accuracy_mean;
    }
    c.cluster_minus_random = cl - rn;
  }
  return c;
}

inline void write_comparison(std::ostream& os, const Comparison& c) {
  os << std::left << std::setw(10) << "policy" << std::right << std::setw(8) << "traces"
     << std::setw(22) << "final_acc (mean±std)" << std::setw(14) << "final_loss" << std::setw(18)
     << "tail_acc_var" << '\n';
  for (const auto& s : c.policies) {
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(4) << s.final_accuracy_mean << "±"
        << s.final_accuracy_std;
    os << std::left << std::setw(10) << s.policy << std::right << std::setw(8) << s.traces
       << std::setw(23) << acc.str() << std::setw(14) << std::fixed << std::setprecision(5)
       << s.final_loss_mean << std::setw(18) << std::scientific << std::setprecision(3)
       << s.tail_variance_mean << '\n';
    os.unsetf(std::ios::floatfield);
  }
  if (c.cluster_minus_random) {
    os << "cluster - random final accuracy: " << std::showpos << std::fixed
       << std::setprecision(4) << *c.cluster_minus_random << std::noshowpos << '\n';
    os.unsetf(std::ios::floatfield);
  }
}

inline Comparison cmd_compare(const std::vector<fs::path>& csv_paths, std::ostream& out) {
  if (csv_paths.size() < 2) throw ConfigError("need two policies to compare");
  std::vector<std::vector<MetricsRow>> traces;
  std::vector<std::string> names;
  for (const auto& p : csv_paths) {
    traces.push_back(read_metrics_csv(p));
    names.push_back(p.string());
  }
  auto c = compare_traces(traces, names);
  write_comparison(out, c);
  return c;
}

}  // namespace geofl
