#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detdb/aspn.hpp"
#include "detdb/model.hpp"
#include "detdb/mvstore.hpp"

namespace detdb {

enum class Protocol : std::uint8_t { kPredictive, kRule1Only, kRule2Only, kAria, kAriaFallback, kFga };

const char* to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);
// Whether commit-phase rejects go to the fallback round.
bool uses_fallback(Protocol p);

struct EngineConfig {
  Protocol protocol = Protocol::kPredictive;
  std::size_t worker_threads = 1;
  std::size_t batch_size = 1000;
  bool prediction_enabled = false;
  std::size_t defer_threshold = 3;
  // Expected overlapping rows at which a predicted pair counts as a conflict.
  double conflict_rows = 0.5;
  AspnConfig aspn_config;
  std::uint64_t rng_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EngineConfig from_json(const nlohmann::json& j);
};

struct PhaseTimings {
  double prediction = 0.0;
  double execution = 0.0;
  double commit = 0.0;
  double fallback = 0.0;
  double gc = 0.0;

  double total() const { return prediction + execution + commit + fallback + gc; }
  nlohmann::json to_json() const;
};

struct BatchMetrics {
  PhaseTimings timings;
  std::size_t batch_size = 0;
  std::size_t predicted_pairs = 0;
  std::size_t actual_pairs = 0;
  std::size_t deferred = 0;
  std::size_t fallback_reexecuted = 0;
  std::size_t reclaimed = 0;

  double commit_rate(std::size_t committed) const;
};

struct BatchOutcome {
  std::uint64_t epoch = 0;
  std::vector<Tid> committed_main;
  std::vector<Tid> committed_fallback;
  std::vector<Tid> aborted;
  std::vector<Tid> deferred;  // subset of the fallback candidates
  BatchMetrics metrics;

  std::size_t committed() const { return committed_main.size() + committed_fallback.size(); }
  double commit_rate() const { return metrics.commit_rate(committed()); }
  // Everything but wall-clock timings; stable across thread counts.
  nlohmann::json canonical_json() const;
  nlohmann::json to_json() const;
};

// Pairwise conflict prediction from summaries. Without a model for the
// table, a non-empty box intersection counts as a conflict.
bool predicted_conflict(const Transaction& a, const Transaction& b, const ModelSet* models,
                        const Schema& schema, double conflict_rows);

struct PredictionResult {
  std::vector<Tid> scheduled;
  std::vector<Tid> deferred;
  std::size_t predicted_pairs = 0;
  std::vector<std::size_t> degree;  // indexed by tid
};

PredictionResult prediction_phase(const ModelSet* models, const std::vector<Transaction>& batch,
                                  const Schema& schema, const EngineConfig& config);

struct ExecutionResult {
  std::vector<Tid> executed;
  std::vector<Tid> failed;
};

// Runs `scheduled` against the epoch snapshot and installs their writes as
// uncommitted main-round versions.
ExecutionResult execution_phase(MvStore& store, const Snapshot& snap, std::vector<Transaction>& batch,
                                const std::vector<Tid>& scheduled, std::size_t threads);

struct CommitDecision {
  std::vector<Tid> committed;
  std::vector<Tid> rejected;
  std::size_t conflict_pairs = 0;
};

CommitDecision commit_decision(const std::vector<Transaction>& batch, Protocol protocol, std::size_t threads);

class Engine {
 public:
  Engine(EngineConfig config, MvStore& store, const ModelSet* models = nullptr);

  const EngineConfig& config() const { return config_; }
  // One JSON line per batch when set.
  void set_trace(std::ostream* out) { trace_ = out; }
  // Tids must be dense from 1. Fills read/write sets as a side effect.
  BatchOutcome run_batch(std::vector<Transaction>& batch);

 private:
  void fallback_phase(std::vector<Transaction>& batch, const std::vector<Tid>& tids, BatchOutcome& out);

  EngineConfig config_;
  MvStore& store_;
  const ModelSet* models_;
  std::ostream* trace_ = nullptr;
};

BatchOutcome run_batch(const EngineConfig& config, MvStore& store, const ModelSet* models,
                       std::vector<Transaction>& batch);

}  // namespace detdb
