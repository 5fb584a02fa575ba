#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "detdb/engine.hpp"
#include "detdb/workloads.hpp"

namespace detdb::bench {

struct ExperimentConfig {
  EngineConfig engine;
  WorkloadSpec workload;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  // Pairs per epoch labeled against the full-scan ground truth.
  std::size_t label_sample_pairs = 2000;
  // Rows per table used to train prediction models.
  std::size_t train_rows = 20000;

  // Pushes `seed` into the engine, workload and model seeds.
  void apply_seed(std::uint64_t s);
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  Confusion& operator+=(const Confusion& o);
};

struct PredictionMetrics {
  Confusion counts;
  double accuracy = 1.0;
  double precision = 1.0;
  double recall = 1.0;
  // Set for each metric whose denominator was zero.
  bool accuracy_undefined = false;
  bool precision_undefined = false;
  bool recall_undefined = false;
  double t_p = 0.0;  // prediction seconds
  double t_e = 0.0;  // full-scan labeling seconds

  nlohmann::json to_json() const;
};

PredictionMetrics compute_prediction_metrics(const Confusion& c);
// Pairs are (lo, hi) tids or any other ids drawn from a universe of
// `universe` pairs.
PredictionMetrics compute_prediction_metrics(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& predicted,
                                             const std::vector<std::pair<std::uint32_t, std::uint32_t>>& truth,
                                             std::uint64_t universe);

struct EpochRow {
  std::uint64_t epoch = 0;
  BatchOutcome outcome;
};

struct MetricsReport {
  ExperimentConfig config;
  std::vector<EpochRow> rows;
  std::uint64_t workload_checksum = 0;
  std::uint64_t state_checksum = 0;
  std::size_t committed = 0;
  std::size_t submitted = 0;
  std::size_t backlog = 0;
  double wall_seconds = 0.0;
  double train_seconds = 0.0;
  PhaseTimings phase_totals;
  std::optional<PredictionMetrics> prediction;

  double txns_per_sec() const;
  double commit_rate() const;
  // Deterministic part only.
  nlohmann::json canonical_json() const;
  nlohmann::json to_json() const;
  std::string csv() const;
  void write(const std::string& dir) const;
};

inline constexpr const char* kEpochCsvHeader =
    "epoch,batch_size,committed_main,committed_fallback,aborted,deferred,commit_rate,predicted_pairs,"
    "actual_pairs,fallback_reexecuted,reclaimed,prediction_s,execution_s,commit_s,fallback_s,gc_s,total_s";

MetricsReport run_experiment(const ExperimentConfig& config);

struct VerifyReport {
  std::size_t batches = 0;
  std::size_t committed = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

// Runs the configured epochs and checks every batch against the serial
// replay oracle, plus a single-thread rerun for determinism.
VerifyReport verify_experiment(const ExperimentConfig& config);

std::uint64_t dump_checksum(const StoreDump& dump);

}  // namespace detdb::bench
