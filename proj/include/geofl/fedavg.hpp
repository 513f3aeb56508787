#pragma once

// FedAvg with pluggable participant selection: broadcast the global model,
// train each selected client locally, and average the uploads weighted by
// local sample count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "geofl/clustering.hpp"
#include "geofl/datasets.hpp"
#include "geofl/errors.hpp"
#include "geofl/learner.hpp"
#include "geofl/rng.hpp"
#include "geofl/selection.hpp"
#include "geofl/spatial_partition.hpp"

namespace geofl {

class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicySpec {
  PolicyKind kind = PolicyKind::cluster;
  std::size_t participants = 5;  // N: clusters for the cluster policy, sample size otherwise
  std::optional<ClusterModel> stored_clusters;
  KMeansOptions kmeans;
};

struct FederationConfig {
  std::size_t rounds = 1;
  TrainSpec train;
  MlpArchitecture arch;
  PolicySpec policy;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  bool population_train_loss = false;  // loss over all clients instead of S_t
  std::size_t threads = 1;             // 0 = hardware concurrency
  bool record_wall_time = true;

  void validate() const {
    if (rounds < 1) throw ConfigError("rounds must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (policy.participants < 1) throw ConfigError("participants must be at least 1");
    train.validate();
    arch.validate();
  }
};

struct RoundRecord {
  std::size_t round = 0;
  PolicyKind policy = PolicyKind::cluster;
  SelectedSet selected;
  double train_loss = 0.0;  // NaN when no selected client held data
  double test_accuracy = 0.0;
  bool evaluated = false;   // false: accuracy carried over from the last evaluation
  std::size_t distinct_labels = 0;
  double wall_time = 0.0;
  bool aggregated = true;
};

template <class Real>
struct ClientUpdate {
  std::size_t client = 0;
  const ModelParams<Real>* params = nullptr;
  double weight = 0.0;  // n_k
};

/// Weighted coordinate mean sum(n_k w_k) / sum(n_k). Summation runs in
/// ascending client index regardless of input order.
template <class Real>
ModelParams<Real> aggregate(std::span<const ClientUpdate<Real>> updates) {
  std::vector<const ClientUpdate<Real>*> order;
  double total = 0.0;
  for (const auto& u : updates) {
    if (!(u.weight >= 0.0) || !std::isfinite(u.weight)) {
      throw AggregationError("aggregation weight must be finite and non-negative");
    }
    if (u.weight > 0.0) {
      order.push_back(&u);
      total += u.weight;
    }
  }
  if (order.empty()) throw AggregationError("no effective participants");
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->client < b->client; });

  const auto& first = *order.front()->params;
  for (const auto* u : order) {
    if (!(u->params->arch == first.arch) || u->params->size() != first.size()) {
      throw AggregationError("architecture mismatch between client updates");
    }
  }
  if (order.size() == 1) return first;

  const std::size_t n = first.size();
  std::vector<double> acc(n, 0.0);
  std::vector<Real> lo(first.values);
  std::vector<Real> hi(first.values);
  for (const auto* u : order) {
    const auto& w = u->params->values;
    for (std::size_t i = 0; i < n; ++i) {
      acc[i] += u->weight * static_cast<double>(w[i]);
      lo[i] = std::min(lo[i], w[i]);
      hi[i] = std::max(hi[i], w[i]);
    }
  }
  ModelParams<Real> out(first.arch);
  for (std::size_t i = 0; i < n; ++i) {
    // The quotient can land one ulp outside the participant range.
    out.values[i] = std::clamp(static_cast<Real>(acc[i] / total), lo[i], hi[i]);
  }
  return out;
}

template <class Real>
ModelParams<Real> aggregate(const std::vector<ClientUpdate<Real>>& updates) {
  return aggregate(std::span<const ClientUpdate<Real>>(updates));
}

namespace detail {

template <class Real>
std::uint64_t fingerprint(const ModelParams<Real>& p) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.values.data());
  for (std::size_t i = 0; i < p.values.size() * sizeof(Real); ++i) {
    h = (h ^ bytes[i]) * 1099511628211ULL;
  }
  return h;
}

inline std::size_t resolve_threads(std::size_t requested, std::size_t jobs) {
  std::size_t t = requested == 0 ? std::max<unsigned>(1, std::thread::hardware_concurrency())
                                 : requested;
  return std::max<std::size_t>(1, std::min(t, jobs));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = resolve_threads(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Builds the runtime selection policy, clustering UE locations when the
/// cluster policy has no stored model.
inline SelectionPolicy build_policy(const PolicySpec& spec, const SpatialPartition& partition,
                                    std::uint64_t seed) {
  const std::size_t population = partition.ues.positions.size();
  if (spec.participants > population) {
    throw ConfigError("participants (" + std::to_string(spec.participants) +
                      ") exceed the UE population (" + std::to_string(population) + ")");
  }
  if (spec.kind == PolicyKind::random) return UniformRandom{population, spec.participants};
  if (spec.stored_clusters) {
    if (spec.stored_clusters->population() != population) {
      throw ConfigError("stored cluster model covers a different population");
    }
    SelectionPolicy p = ClusterBased{*spec.stored_clusters};
    validate(p);
    return p;
  }
  auto rng = make_stream(seed, StreamTag::clustering);
  return ClusterBased{kmeans(location_metadata(partition.ues), spec.participants, spec.kmeans, rng)};
}

template <class Real>
struct RoundOutcome {
  ModelParams<Real> global;
  RoundRecord record;
};

/// One broadcast / local-train / aggregate cycle. Clients without data are
/// selected but carry zero weight. If no selected client has data the global
/// model is returned unchanged and the record is marked not aggregated.
template <class Real>
RoundOutcome<Real> run_round(const ModelParams<Real>& global, const FederatedData<Real>& data,
                             const SelectionPolicy& policy, const FederationConfig& config,
                             std::size_t round) {
  const auto started = std::chrono::steady_clock::now();
  RoundOutcome<Real> out;
  auto& rec = out.record;
  rec.round = round;
  rec.policy = kind_of(policy);
  rec.selected = select_for_round(policy, config.seed, round);
  const auto& sel = rec.selected.indices;
  for (const auto k : sel) {
    if (k >= data.num_clients()) throw RoundError(round, "selected client index out of range");
  }
  rec.distinct_labels = distinct_labels(data.clients, sel, data.source.num_classes);

  const std::uint64_t broadcast = detail::fingerprint(global);
  std::vector<std::optional<LocalResult<Real>>> local(sel.size());
  detail::parallel_for(sel.size(), config.threads, [&](std::size_t j) {
    const std::size_t k = sel[j];
    ModelParams<Real> start = global;
    if (detail::fingerprint(start) != broadcast) {
      throw std::logic_error("broadcast model differs between clients");
    }
    auto rng = make_stream(config.seed, StreamTag::local_training, round, k);
    local[j] = local_train(start, data.clients[k], config.train, rng);
  });

  std::vector<ClientUpdate<Real>> updates;
  for (std::size_t j = 0; j < sel.size(); ++j) {
    if (local[j]->skipped) continue;
    updates.push_back({sel[j], &local[j]->params, static_cast<double>(data.clients[sel[j]].size())});
  }
  if (updates.empty()) {
    out.global = global;
    rec.aggregated = false;
    rec.train_loss = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.global = aggregate<Real>(updates);
    // Sample-weighted mean of local losses at the new global model.
    std::vector<std::size_t> loss_clients;
    if (config.population_train_loss) {
      for (std::size_t k = 0; k < data.num_clients(); ++k) loss_clients.push_back(k);
    } else {
      for (const auto& u : updates) loss_clients.push_back(u.client);
      std::sort(loss_clients.begin(), loss_clients.end());
    }
    std::vector<double> sums(loss_clients.size(), 0.0);
    detail::parallel_for(loss_clients.size(), config.threads, [&](std::size_t j) {
      const auto& c = data.clients[loss_clients[j]];
      if (!c.empty()) sums[j] = evaluate(out.global, c).loss * static_cast<double>(c.size());
    });
    double total_loss = 0.0;
    double total_n = 0.0;
    for (std::size_t j = 0; j < loss_clients.size(); ++j) {
      total_loss += sums[j];
      total_n += static_cast<double>(data.clients[loss_clients[j]].size());
    }
    rec.train_loss = total_loss / total_n;
  }
  if (config.record_wall_time) {
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return out;
}

template <class Real>
struct TrainingResult {
  ModelParams<Real> final_model;
  std::vector<RoundRecord> records;
  std::optional<ClusterModel> clusters;
};

template <class Real>
struct TrainingHooks {
  // Continue after `start_round` completed rounds from `model`, keeping `records`.
  std::optional<std::size_t> start_round;
  std::optional<ModelParams<Real>> model;
  std::vector<RoundRecord> records;
  // Called after every round with the updated global model.
  std::function<void(const RoundRecord&, const ModelParams<Real>&)> on_round;
};

/// Initial global model for a federation seed.
template <class Real>
ModelParams<Real> initial_model(const FederationConfig& config) {
  auto rng = make_stream(config.seed, StreamTag::model_init);
  return init_params<Real>(config.arch, rng);
}

/// Full training loop: cluster once (cluster policy), then T rounds. Test
/// accuracy is measured on round 1, every eval_every rounds, and the last
/// round; other rounds carry the previous value.
template <class Real>
TrainingResult<Real> run_training(const SpatialPartition& partition,
                                  const FederatedData<Real>& data, const FederationConfig& config,
                                  TrainingHooks<Real> hooks = {}) {
  config.validate();
  if (data.num_clients() != partition.capture_lists.size()) {
    throw ConfigError("client count does not match the partition");
  }
  if (data.source.feature_dim() != config.arch.input_dim) {
    throw ConfigError("dataset feature dimension " + std::to_string(data.source.feature_dim()) +
                      " does not match MLP input " + std::to_string(config.arch.input_dim));
  }
  if (data.source.num_classes > config.arch.output_dim) {
    throw ConfigError("dataset has more classes than MLP outputs");
  }

  TrainingResult<Real> result;
  const SelectionPolicy policy = build_policy(config.policy, partition, config.seed);
  if (const auto* cb = std::get_if<ClusterBased>(&policy)) result.clusters = cb->clusters;

  ModelParams<Real> global = hooks.model ? *hooks.model : initial_model<Real>(config);
  const std::size_t first = hooks.start_round.value_or(0) + 1;
  result.records = std::move(hooks.records);
  result.records.reserve(config.rounds);
  double last_accuracy = result.records.empty() ? 0.0 : result.records.back().test_accuracy;

  for (std::size_t t = first; t <= config.rounds; ++t) {
    RoundOutcome<Real> outcome;
    try {
      outcome = run_round(global, data, policy, config, t);
    } catch (const RoundError&) {
      throw;
    } catch (const std::exception& e) {
      throw RoundError(t, e.what());
    }
    global = std::move(outcome.global);
    auto& rec = outcome.record;
    const bool eval_now = t == 1 || t % config.eval_every == 0 || t == config.rounds;
    if (eval_now && !data.test.empty()) {
      last_accuracy = evaluate(global, data.test).accuracy;
      rec.evaluated = true;
    }
    rec.test_accuracy = last_accuracy;
    if (hooks.on_round) hooks.on_round(rec, global);
    result.records.push_back(std::move(rec));
  }
  result.final_model = std::move(global);
  return result;
}

}  // namespace geofl
