#include "experiment.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "detdb/error.hpp"
#include "detdb/oracle.hpp"
#include "detdb/rng.hpp"

namespace detdb::bench {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t fnv(std::uint64_t h, std::int64_t v) {
  auto u = static_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) {
    h ^= (u >> (8 * b)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

struct Labeler {
  const std::vector<TableData>& tables;

  const RecordSet* records(TableId t) const {
    for (const auto& td : tables) {
      if (td.schema.id == t) return &td.records;
    }
    return nullptr;
  }

  bool truth(const Transaction& a, const Transaction& b) const {
    auto any = [&](const std::vector<Predicate>& xs, const std::vector<Predicate>& ys) {
      for (const auto& x : xs) {
        for (const auto& y : ys) {
          if (x.table() != y.table()) continue;
          const auto* rs = records(x.table());
          if (rs && oracle::conflict_ground_truth(*rs, x, y)) return true;
        }
      }
      return false;
    };
    return any(a.write_summary, b.write_summary) || any(a.write_summary, b.read_summary) ||
           any(a.read_summary, b.write_summary);
  }
};

ModelSet train_models(const std::vector<TableData>& tables, const ExperimentConfig& cfg) {
  ModelSet models;
  for (const auto& td : tables) {
    if (td.records.size() < 2) continue;
    std::vector<std::size_t> keep;
    const std::size_t n = td.records.size();
    const std::size_t take = std::min(n, cfg.train_rows);
    for (std::size_t i = 0; i < take; ++i) keep.push_back(i * n / take);
    auto m = build_model(td.schema, td.records.select(keep), cfg.engine.aspn_config);
    m.sample_size = n;
    models.set(td.schema.id, std::make_shared<const AspnModel>(std::move(m)));
  }
  return models;
}

std::vector<Transaction> take_batch(std::deque<Transaction>& queue, std::size_t n) {
  std::vector<Transaction> batch;
  n = std::min(n, queue.size());
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(std::move(queue.front()));
    queue.pop_front();
    batch.back().tid = static_cast<Tid>(i + 1);
    batch.back().reset_execution();
  }
  return batch;
}

void requeue(std::deque<Transaction>& queue, std::vector<Transaction>& batch, const std::vector<Tid>& aborted) {
  for (auto it = aborted.rbegin(); it != aborted.rend(); ++it) {
    auto& t = batch[*it - 1];
    t.reset_execution();
    queue.push_front(std::move(t));
  }
}

}  // namespace

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  workload.rng_seed = s;
  engine.rng_seed = s;
  engine.aspn_config.rng_seed = s;
}

void ExperimentConfig::validate() const {
  engine.validate();
  workload.validate();
}

json ExperimentConfig::to_json() const {
  return {{"engine", engine.to_json()},
          {"workload", workload.to_json()},
          {"epochs", epochs},
          {"seed", seed},
          {"label_sample_pairs", label_sample_pairs},
          {"train_rows", train_rows}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig c;
  std::optional<std::uint64_t> seed;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "engine") c.engine = EngineConfig::from_json(v);
      else if (k == "workload") c.workload = WorkloadSpec::from_json(v);
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "seed") seed = v.get<std::uint64_t>();
      else if (k == "label_sample_pairs") c.label_sample_pairs = v.get<std::size_t>();
      else if (k == "train_rows") c.train_rows = v.get<std::size_t>();
      else throw ConfigError("config." + k + ": unknown field");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (seed) c.apply_seed(*seed);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return from_json(j);
}

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

json PredictionMetrics::to_json() const {
  return {{"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"accuracy_undefined", accuracy_undefined},
          {"precision_undefined", precision_undefined},
          {"recall_undefined", recall_undefined}};
}

PredictionMetrics compute_prediction_metrics(const Confusion& c) {
  PredictionMetrics m;
  m.counts = c;
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn, m.accuracy_undefined);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_undefined);
  m.recall = ratio(c.tp, c.tp + c.fn, m.recall_undefined);
  return m;
}

PredictionMetrics compute_prediction_metrics(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& predicted,
                                             const std::vector<std::pair<std::uint32_t, std::uint32_t>>& truth,
                                             std::uint64_t universe) {
  auto p = predicted, t = truth;
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> both;
  std::set_intersection(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(both));
  Confusion c;
  c.tp = both.size();
  c.fp = p.size() - both.size();
  c.fn = t.size() - both.size();
  const std::uint64_t positive = c.tp + c.fp + c.fn;
  if (universe < positive) throw UsageError("pair universe smaller than the labeled pairs");
  c.tn = universe - positive;
  return compute_prediction_metrics(c);
}

double MetricsReport::txns_per_sec() const {
  return wall_seconds > 0.0 ? static_cast<double>(committed) / wall_seconds : 0.0;
}

double MetricsReport::commit_rate() const {
  std::size_t processed = 0;
  for (const auto& r : rows) processed += r.outcome.metrics.batch_size;
  return processed == 0 ? 1.0 : static_cast<double>(committed) / static_cast<double>(processed);
}

json MetricsReport::canonical_json() const {
  json epochs = json::array();
  for (const auto& r : rows) {
    json e = r.outcome.canonical_json();
    e["commit_rate"] = r.outcome.commit_rate();
    epochs.push_back(e);
  }
  json j = {{"config", config.to_json()},
            {"workload_checksum", hex(workload_checksum)},
            {"state_checksum", hex(state_checksum)},
            {"submitted", submitted},
            {"committed", committed},
            {"backlog", backlog},
            {"commit_rate", commit_rate()},
            {"epochs", epochs}};
  if (prediction) j["prediction"] = prediction->to_json();
  return j;
}

json MetricsReport::to_json() const {
  json j = canonical_json();
  json per_epoch = json::array();
  for (const auto& r : rows) per_epoch.push_back(r.outcome.metrics.timings.to_json());
  j["timing"] = {{"wall_seconds", wall_seconds},
                 {"txns_per_sec", txns_per_sec()},
                 {"train_seconds", train_seconds},
                 {"phases", phase_totals.to_json()},
                 {"per_epoch", per_epoch}};
  if (prediction) {
    j["timing"]["t_p"] = prediction->t_p;
    j["timing"]["t_e"] = prediction->t_e;
  }
  return j;
}

std::string MetricsReport::csv() const {
  std::ostringstream out;
  out << kEpochCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& o = r.outcome;
    const auto& m = o.metrics;
    const auto& t = m.timings;
    out << r.epoch << ',' << m.batch_size << ',' << o.committed_main.size() << ',' << o.committed_fallback.size()
        << ',' << o.aborted.size() << ',' << o.deferred.size() << ',' << o.commit_rate() << ','
        << m.predicted_pairs << ',' << m.actual_pairs << ',' << m.fallback_reexecuted << ',' << m.reclaimed << ','
        << t.prediction << ',' << t.execution << ',' << t.commit << ',' << t.fallback << ',' << t.gc << ','
        << t.total() << '\n';
  }
  return out.str();
}

void MetricsReport::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::string stem = std::string(to_string(config.engine.protocol)) + "_theta" +
                           std::to_string(config.workload.zipf_theta).substr(0, 5);
  std::ofstream csv_out(std::filesystem::path(dir) / (stem + "_epochs.csv"));
  csv_out << csv();
  std::ofstream json_out(std::filesystem::path(dir) / (stem + "_summary.json"));
  json_out << to_json().dump(2) << '\n';
  if (!csv_out || !json_out) throw ConfigError("cannot write report files under " + dir);
}

std::uint64_t dump_checksum(const StoreDump& dump) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : dump) {
    h = fnv(h, k.table);
    h = fnv(h, k.pk);
    for (const auto x : v) h = fnv(h, x);
  }
  return h;
}

MetricsReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  MetricsReport report;
  report.config = config;
  const Schema schema = workload_schema(config.workload);
  MvStore store(schema);
  populate_store(store, config.workload);
  const bool predict = config.engine.prediction_enabled && uses_fallback(config.engine.protocol);
  std::vector<TableData> tables;
  if (predict) tables = initial_tables(config.workload);
  ModelSet models;
  if (predict) {
    const auto t0 = Clock::now();
    models = train_models(tables, config);
    report.train_seconds = seconds_since(t0);
  }
  Engine engine(config.engine, store, predict ? &models : nullptr);
  const WorkloadGenerator gen(config.workload);
  std::deque<Transaction> queue;
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  Confusion confusion;
  double t_p = 0.0, t_e = 0.0;
  const Labeler labeler{tables};

  for (std::size_t e = 1; e <= config.epochs; ++e) {
    auto fresh = gen.batch(config.engine.batch_size, e);
    checksum = fnv(checksum, static_cast<std::int64_t>(batch_checksum(fresh)));
    report.submitted += fresh.size();
    for (auto& t : fresh) queue.push_back(std::move(t));
    auto batch = take_batch(queue, config.engine.batch_size);

    if (predict && batch.size() >= 2 && config.label_sample_pairs > 0) {
      Rng rng(mix64(config.seed, 0x1abe1000ULL + e));
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t s = 0; s < config.label_sample_pairs; ++s) {
        std::size_t a = rng.below(batch.size()), b = rng.below(batch.size() - 1);
        if (b >= a) ++b;
        pairs.emplace_back(std::min(a, b), std::max(a, b));
      }
      std::vector<char> guess(pairs.size()), real(pairs.size());
      auto t0 = Clock::now();
      for (std::size_t s = 0; s < pairs.size(); ++s) {
        guess[s] = predicted_conflict(batch[pairs[s].first], batch[pairs[s].second], &models, schema,
                                      config.engine.conflict_rows);
      }
      t_p += seconds_since(t0);
      t0 = Clock::now();
      for (std::size_t s = 0; s < pairs.size(); ++s) {
        real[s] = labeler.truth(batch[pairs[s].first], batch[pairs[s].second]);
      }
      t_e += seconds_since(t0);
      for (std::size_t s = 0; s < pairs.size(); ++s) {
        if (guess[s] && real[s]) ++confusion.tp;
        else if (guess[s]) ++confusion.fp;
        else if (real[s]) ++confusion.fn;
        else ++confusion.tn;
      }
    }

    const auto t0 = Clock::now();
    auto outcome = engine.run_batch(batch);
    report.wall_seconds += seconds_since(t0);
    report.committed += outcome.committed();
    const auto& tm = outcome.metrics.timings;
    report.phase_totals.prediction += tm.prediction;
    report.phase_totals.execution += tm.execution;
    report.phase_totals.commit += tm.commit;
    report.phase_totals.fallback += tm.fallback;
    report.phase_totals.gc += tm.gc;
    requeue(queue, batch, outcome.aborted);
    report.rows.push_back({e, std::move(outcome)});
  }
  report.workload_checksum = checksum;
  report.backlog = queue.size();
  report.state_checksum = dump_checksum(store.dump());
  if (predict) {
    auto pm = compute_prediction_metrics(confusion);
    pm.t_p = t_p;
    pm.t_e = t_e;
    report.prediction = pm;
  }
  return report;
}

json VerifyReport::to_json() const {
  return {{"batches", batches}, {"committed", committed}, {"ok", ok()}, {"violations", violations}};
}

VerifyReport verify_experiment(const ExperimentConfig& config) {
  config.validate();
  VerifyReport report;
  const Schema schema = workload_schema(config.workload);
  MvStore store(schema), reference(schema);
  populate_store(store, config.workload);
  populate_store(reference, config.workload);
  const bool predict = config.engine.prediction_enabled && uses_fallback(config.engine.protocol);
  ModelSet models;
  if (predict) models = train_models(initial_tables(config.workload), config);
  EngineConfig single = config.engine;
  single.worker_threads = 1;
  Engine engine(config.engine, store, predict ? &models : nullptr);
  Engine ref_engine(single, reference, predict ? &models : nullptr);
  const WorkloadGenerator gen(config.workload);
  std::deque<Transaction> queue, ref_queue;

  for (std::size_t e = 1; e <= config.epochs; ++e) {
    auto fresh = gen.batch(config.engine.batch_size, e);
    for (const auto& t : fresh) {
      queue.push_back(t);
      ref_queue.push_back(t);
    }
    auto batch = take_batch(queue, config.engine.batch_size);
    auto ref_batch = take_batch(ref_queue, config.engine.batch_size);
    const StoreDump before = store.dump();
    const auto outcome = engine.run_batch(batch);
    const auto ref_outcome = ref_engine.run_batch(ref_batch);
    ++report.batches;
    report.committed += outcome.committed();
    const std::string tag = "epoch " + std::to_string(e) + ": ";

    const auto graph = oracle::build_conflict_graph(batch, outcome.committed_main, outcome.committed_fallback);
    const auto order = oracle::topological_order(graph);
    if (!order) {
      report.violations.push_back(tag + "committed set has a dependency cycle");
    } else {
      std::vector<const Transaction*> seq;
      for (const auto t : *order) seq.push_back(&batch[t - 1]);
      if (oracle::serial_replay(before, seq) != store.dump()) {
        report.violations.push_back(tag + "store differs from the serial replay");
      }
    }
    if (outcome.canonical_json() != ref_outcome.canonical_json()) {
      report.violations.push_back(tag + "outcome differs from the single-thread run");
    }
    if (store.max_chain_length() > 1) report.violations.push_back(tag + "version chain longer than 1 after GC");
    requeue(queue, batch, outcome.aborted);
    requeue(ref_queue, ref_batch, ref_outcome.aborted);
  }
  if (store.dump() != reference.dump()) report.violations.push_back("final store differs from the single-thread run");
  return report;
}

}  // namespace detdb::bench
