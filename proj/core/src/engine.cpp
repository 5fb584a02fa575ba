#include "detdb/engine.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "detdb/baselines.hpp"
#include "detdb/error.hpp"
#include "detdb/mtfs.hpp"
#include "parallel.hpp"

namespace detdb {

using nlohmann::json;

namespace {

struct ProtocolName {
  Protocol p;
  const char* name;
};

constexpr ProtocolName kProtocolNames[] = {{Protocol::kPredictive, "predictive"},
                                           {Protocol::kRule1Only, "rule1"},
                                           {Protocol::kRule2Only, "rule2"},
                                           {Protocol::kAria, "aria"},
                                           {Protocol::kAriaFallback, "aria_fb"},
                                           {Protocol::kFga, "fga"}};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ------------------------------------------------------------ interpreter

class ReadView {
 public:
  virtual ~ReadView() = default;
  virtual const AttributeVector* get(const Key& k) const = 0;
  virtual void scan(const Predicate& p, const MvStore::ScanFn& fn) const = 0;
};

class SnapshotView final : public ReadView {
 public:
  SnapshotView(const MvStore& s, Snapshot snap) : store_(s), snap_(snap) {}
  const AttributeVector* get(const Key& k) const override { return store_.try_snapshot_read(snap_, k); }
  void scan(const Predicate& p, const MvStore::ScanFn& fn) const override { store_.scan_snapshot(snap_, p, fn); }

 private:
  const MvStore& store_;
  Snapshot snap_;
};

class VisibleView final : public ReadView {
 public:
  VisibleView(const MvStore& s, Timestamp reader) : store_(s), reader_(reader) {}
  const AttributeVector* get(const Key& k) const override { return store_.read_visible(k, reader_); }
  void scan(const Predicate& p, const MvStore::ScanFn& fn) const override { store_.scan_visible(reader_, p, fn); }

 private:
  const MvStore& store_;
  Timestamp reader_;
};

using Rows = std::vector<std::pair<Key, AttributeVector>>;

struct Observation {
  Key key;
  std::optional<AttributeVector> value;
  std::optional<Predicate> range;
  Rows rows;
};

struct Trace {
  std::map<Key, AttributeVector> writes;
  KeySet read_set;
  KeySet write_set;
  std::vector<Observation> observed;
  bool ok = false;
};

Rows scan_rows(const ReadView& view, const Predicate& p) {
  Rows rows;
  view.scan(p, [&](const Key& k, const AttributeVector& v) { rows.emplace_back(k, v); });
  return rows;
}

// Store rows in the predicate's key range with the transaction's own
// writes laid over them, in key order; the flag marks overlay rows.
std::vector<std::tuple<Key, AttributeVector, bool>> merged_rows(const Rows& base, const Predicate& p,
                                                                 const std::map<Key, AttributeVector>& writes,
                                                                 const Schema& schema) {
  std::map<Key, std::pair<AttributeVector, bool>> m;
  for (const auto& [k, v] : base) m.emplace(k, std::make_pair(v, false));
  const auto& t = schema.table(p.table());
  Interval keys{std::numeric_limits<AttrValue>::min(), std::numeric_limits<AttrValue>::max()};
  if (t.key_attribute) keys = p.bound(*t.key_attribute);
  for (auto it = writes.lower_bound(Key{p.table(), keys.lo}); it != writes.end(); ++it) {
    if (it->first.table != p.table() || it->first.pk > keys.hi) break;
    m[it->first] = {it->second, true};
  }
  std::vector<std::tuple<Key, AttributeVector, bool>> out;
  for (auto& [k, vo] : m) out.emplace_back(k, std::move(vo.first), vo.second);
  return out;
}

Trace execute(const Transaction& txn, const ReadView& view, const Schema& schema) {
  Trace tr;
  for (const auto& op : txn.ops) {
    if (const auto* r = std::get_if<PointRead>(&op)) {
      if (tr.writes.count(r->key)) continue;
      const auto* v = view.get(r->key);
      Observation o;
      o.key = r->key;
      if (v) o.value = *v;
      tr.observed.push_back(std::move(o));
      if (!v) throw NotFoundError("read of unknown key " + to_string(r->key));
      tr.read_set.push_back(r->key);
    } else if (const auto* w = std::get_if<PointWrite>(&op)) {
      tr.writes[w->key] = w->value;
      tr.write_set.push_back(w->key);
    } else {
      const Predicate* pred = nullptr;
      const RangeWrite* rw = std::get_if<RangeWrite>(&op);
      if (rw) {
        pred = &rw->pred;
      } else {
        pred = &std::get<RangeRead>(op).pred;
      }
      if (pred->is_empty()) continue;
      Observation o;
      o.range = *pred;
      o.rows = scan_rows(view, *pred);
      auto merged = merged_rows(o.rows, *pred, tr.writes, schema);
      tr.observed.push_back(std::move(o));
      for (auto& [k, v, own] : merged) {
        if (!pred->matches(v)) continue;
        if (!own) tr.read_set.push_back(k);
        if (rw) {
          v[rw->attribute] += rw->amount;
          tr.writes[k] = v;
          tr.write_set.push_back(k);
        }
      }
    }
  }
  normalize(tr.read_set);
  normalize(tr.write_set);
  tr.ok = true;
  return tr;
}

Trace try_execute(const Transaction& txn, const ReadView& view, const Schema& schema) {
  try {
    return execute(txn, view, schema);
  } catch (const NotFoundError&) {
    return {};
  } catch (const SchemaError&) {
    return {};
  }
}

bool still_valid(const Trace& tr, const ReadView& view) {
  for (const auto& o : tr.observed) {
    if (o.range) {
      if (scan_rows(view, *o.range) != o.rows) return false;
    } else {
      const auto* v = view.get(o.key);
      if (static_cast<bool>(v) != o.value.has_value()) return false;
      if (v && *v != *o.value) return false;
    }
  }
  return true;
}

// ------------------------------------------------------------- prediction

Interval key_range(const Predicate& p, const Schema& schema) {
  const auto& t = schema.table(p.table());
  if (t.key_attribute) return p.bound(*t.key_attribute);
  return {std::numeric_limits<AttrValue>::min(), std::numeric_limits<AttrValue>::max()};
}

struct Oracle {
  const ModelSet* models;
  double conflict_rows;
  std::map<std::vector<AttrValue>, bool> memo;

  bool conflict(const Predicate& a, const Predicate& b) {
    const Predicate x = intersect_predicates(a, b);
    if (x.is_empty()) return false;
    const AspnModel* m = models ? models->find(x.table()) : nullptr;
    if (!m) return true;
    std::vector<AttrValue> key{x.table()};
    for (const auto& iv : x.bounds()) {
      key.push_back(iv.lo);
      key.push_back(iv.hi);
    }
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    const double rows = static_cast<double>(std::max<std::uint64_t>(m->sample_size, 1));
    const bool c = infer_probability(*m, x) * rows >= conflict_rows;
    memo.emplace(std::move(key), c);
    return c;
  }
};

}  // namespace

// ---------------------------------------------------------------- config

const char* to_string(Protocol p) {
  for (const auto& pn : kProtocolNames) {
    if (pn.p == p) return pn.name;
  }
  return "?";
}

Protocol protocol_from_string(std::string_view s) {
  for (const auto& pn : kProtocolNames) {
    if (s == pn.name) return pn.p;
  }
  throw ConfigError("protocol: unknown value " + std::string(s));
}

bool uses_fallback(Protocol p) { return p != Protocol::kAria && p != Protocol::kFga; }

void EngineConfig::validate() const {
  if (worker_threads == 0) throw ConfigError("engine.worker_threads must be positive");
  if (batch_size == 0 || batch_size > kMaxMtfsBatch) {
    throw ConfigError("engine.batch_size must lie in [1, " + std::to_string(kMaxMtfsBatch) + "]");
  }
  if (!(conflict_rows > 0.0)) throw ConfigError("engine.conflict_rows must be positive");
  aspn_config.validate();
}

json EngineConfig::to_json() const {
  return {{"protocol", to_string(protocol)},
          {"worker_threads", worker_threads},
          {"batch_size", batch_size},
          {"prediction_enabled", prediction_enabled},
          {"defer_threshold", defer_threshold},
          {"conflict_rows", conflict_rows},
          {"aspn", aspn_config.to_json()},
          {"rng_seed", rng_seed}};
}

EngineConfig EngineConfig::from_json(const json& j) {
  EngineConfig c;
  if (!j.is_object()) throw ConfigError("engine: expected an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "protocol") c.protocol = protocol_from_string(v.get<std::string>());
      else if (k == "worker_threads") c.worker_threads = v.get<std::size_t>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "prediction_enabled") c.prediction_enabled = v.get<bool>();
      else if (k == "defer_threshold") c.defer_threshold = v.get<std::size_t>();
      else if (k == "conflict_rows") c.conflict_rows = v.get<double>();
      else if (k == "aspn") c.aspn_config = AspnConfig::from_json(v);
      else if (k == "rng_seed") c.rng_seed = v.get<std::uint64_t>();
      else throw ConfigError("engine." + k + ": unknown field");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("engine: ") + e.what());
  }
  c.validate();
  return c;
}

json PhaseTimings::to_json() const {
  return {{"prediction", prediction}, {"execution", execution}, {"commit", commit},
          {"fallback", fallback},     {"gc", gc},               {"total", total()}};
}

double BatchMetrics::commit_rate(std::size_t committed) const {
  return batch_size == 0 ? 1.0 : static_cast<double>(committed) / static_cast<double>(batch_size);
}

json BatchOutcome::canonical_json() const {
  return {{"epoch", epoch},
          {"batch_size", metrics.batch_size},
          {"committed_main", committed_main},
          {"committed_fallback", committed_fallback},
          {"aborted", aborted},
          {"deferred", deferred},
          {"predicted_pairs", metrics.predicted_pairs},
          {"actual_pairs", metrics.actual_pairs},
          {"fallback_reexecuted", metrics.fallback_reexecuted},
          {"reclaimed", metrics.reclaimed}};
}

json BatchOutcome::to_json() const {
  json j = canonical_json();
  j["commit_rate"] = commit_rate();
  j["timings"] = metrics.timings.to_json();
  return j;
}

// ------------------------------------------------------------- prediction

bool predicted_conflict(const Transaction& a, const Transaction& b, const ModelSet* models, const Schema& schema,
                        double conflict_rows) {
  (void)schema;
  Oracle oracle{models, conflict_rows, {}};
  auto any = [&](const std::vector<Predicate>& xs, const std::vector<Predicate>& ys) {
    for (const auto& x : xs) {
      for (const auto& y : ys) {
        if (x.table() == y.table() && oracle.conflict(x, y)) return true;
      }
    }
    return false;
  };
  return any(a.write_summary, b.write_summary) || any(a.write_summary, b.read_summary) ||
         any(a.read_summary, b.write_summary);
}

PredictionResult prediction_phase(const ModelSet* models, const std::vector<Transaction>& batch, const Schema& schema,
                                  const EngineConfig& config) {
  PredictionResult r;
  r.degree.assign(batch.size() + 1, 0);
  if (!config.prediction_enabled || !uses_fallback(config.protocol)) {
    for (const auto& t : batch) r.scheduled.push_back(t.tid);
    return r;
  }
  struct Entry {
    TableId table;
    Interval keys;
    Tid tid;
    bool write;
    const Predicate* pred;
  };
  std::vector<Entry> entries;
  for (const auto& t : batch) {
    for (const auto& p : t.read_summary) {
      if (!p.is_empty()) entries.push_back({p.table(), key_range(p, schema), t.tid, false, &p});
    }
    for (const auto& p : t.write_summary) {
      if (!p.is_empty()) entries.push_back({p.table(), key_range(p, schema), t.tid, true, &p});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.table != b.table) return a.table < b.table;
    if (a.keys.lo != b.keys.lo) return a.keys.lo < b.keys.lo;
    if (a.tid != b.tid) return a.tid < b.tid;
    return a.write < b.write;
  });
  Oracle oracle{models, config.conflict_rows, {}};
  std::unordered_set<std::uint64_t> confirmed;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    std::erase_if(active, [&](std::size_t a) {
      return entries[a].table != e.table || entries[a].keys.hi < e.keys.lo;
    });
    for (const auto ai : active) {
      const auto& a = entries[ai];
      if (a.tid == e.tid || (!a.write && !e.write)) continue;
      const Tid lo = std::min(a.tid, e.tid), hi = std::max(a.tid, e.tid);
      const std::uint64_t pair = (std::uint64_t{lo} << 32) | hi;
      if (confirmed.count(pair)) continue;
      if (oracle.conflict(*a.pred, *e.pred)) confirmed.insert(pair);
    }
    active.push_back(i);
  }
  for (const auto pair : confirmed) {
    ++r.degree[pair >> 32];
    ++r.degree[pair & 0xffffffffULL];
  }
  r.predicted_pairs = confirmed.size();
  for (const auto& t : batch) {
    if (r.degree[t.tid] >= config.defer_threshold) {
      r.deferred.push_back(t.tid);
    } else {
      r.scheduled.push_back(t.tid);
    }
  }
  return r;
}

// -------------------------------------------------------------- execution

ExecutionResult execution_phase(MvStore& store, const Snapshot& snap, std::vector<Transaction>& batch,
                                const std::vector<Tid>& scheduled, std::size_t threads) {
  const SnapshotView view(store, snap);
  std::vector<char> ok(scheduled.size(), 0);
  detail::round_robin(scheduled.size(), threads, [&](std::size_t i) {
    auto& txn = batch[scheduled[i] - 1];
    txn.reset_execution();
    Trace tr = try_execute(txn, view, store.schema());
    if (!tr.ok) return;
    const Timestamp ts = Timestamp::main(snap.epoch, txn.tid);
    for (auto& [k, v] : tr.writes) store.install_version(k, ts, std::move(v));
    txn.read_set = std::move(tr.read_set);
    txn.write_set = std::move(tr.write_set);
    txn.executed = true;
    ok[i] = 1;
  });
  ExecutionResult r;
  for (std::size_t i = 0; i < scheduled.size(); ++i) (ok[i] ? r.executed : r.failed).push_back(scheduled[i]);
  return r;
}

// ----------------------------------------------------------------- commit

CommitDecision commit_decision(const std::vector<Transaction>& batch, Protocol protocol, std::size_t threads) {
  const auto dicts = build_dependency_dicts(batch, batch.size());
  CommitDecision d;
  d.conflict_pairs = dicts.conflict_pairs();
  std::vector<Tid> rejected;
  switch (protocol) {
    case Protocol::kPredictive: {
      MtfsOptions opts;
      opts.threads = threads;
      rejected = run_mtfs(dicts, opts).tids;
      break;
    }
    case Protocol::kRule1Only:
      for (const auto& t : batch) {
        if (t.executed && !eligible_rule1(t.tid, dicts)) rejected.push_back(t.tid);
      }
      break;
    case Protocol::kRule2Only:
      for (const auto& t : batch) {
        if (t.executed && !eligible_rule2(t.tid, dicts)) rejected.push_back(t.tid);
      }
      break;
    case Protocol::kAria:
      rejected = aria_validate(dicts, false);
      break;
    case Protocol::kAriaFallback:
      rejected = aria_validate(dicts, true);
      break;
    case Protocol::kFga:
      rejected = fga_reorder(dicts);
      break;
  }
  std::vector<bool> out(batch.size() + 1, false);
  for (const auto t : rejected) out[t] = true;
  for (const auto& t : batch) {
    if (!t.executed) continue;
    (out[t.tid] ? d.rejected : d.committed).push_back(t.tid);
  }
  return d;
}

// ----------------------------------------------------------------- engine

Engine::Engine(EngineConfig config, MvStore& store, const ModelSet* models)
    : config_(std::move(config)), store_(store), models_(models) {
  config_.validate();
}

void Engine::fallback_phase(std::vector<Transaction>& batch, const std::vector<Tid>& tids, BatchOutcome& out) {
  if (tids.empty()) return;
  const std::uint64_t e = store_.epoch();
  const Schema& schema = store_.schema();
  // Speculative pass on the post-commit state; writes are pre-installed so
  // later tids can observe them.
  std::vector<Trace> spec(tids.size());
  const VisibleView post_commit(store_, Timestamp::fallback(e, 0));
  detail::round_robin(tids.size(), config_.worker_threads, [&](std::size_t i) {
    auto& txn = batch[tids[i] - 1];
    txn.reset_execution();
    spec[i] = try_execute(txn, post_commit, schema);
    if (!spec[i].ok) return;
    const Timestamp ts = Timestamp::fallback(e, txn.tid);
    for (const auto& [k, v] : spec[i].writes) store_.install_version(k, ts, v);
  });
  // Finalization in tid order: keep the speculative result when its reads
  // are unchanged, otherwise re-execute against the now-final prefix.
  for (std::size_t i = 0; i < tids.size(); ++i) {
    auto& txn = batch[tids[i] - 1];
    const Timestamp ts = Timestamp::fallback(e, txn.tid);
    const VisibleView view(store_, ts);
    if (spec[i].ok && still_valid(spec[i], view)) {
      for (const auto& [k, v] : spec[i].writes) store_.commit_version(k, ts);
      txn.read_set = std::move(spec[i].read_set);
      txn.write_set = std::move(spec[i].write_set);
      txn.executed = true;
      out.committed_fallback.push_back(txn.tid);
      continue;
    }
    ++out.metrics.fallback_reexecuted;
    Trace final_trace = try_execute(txn, view, schema);
    const std::map<Key, AttributeVector> none;
    const auto& installed = spec[i].ok ? spec[i].writes : none;
    if (!final_trace.ok) {
      for (const auto& [k, v] : installed) store_.retract_version(k, ts);
      txn.reset_execution();
      out.aborted.push_back(txn.tid);
      continue;
    }
    for (const auto& [k, v] : installed) {
      if (!final_trace.writes.count(k)) store_.retract_version(k, ts);
    }
    for (const auto& [k, v] : final_trace.writes) {
      auto it = installed.find(k);
      if (it == installed.end()) {
        store_.install_version(k, ts, v);
      } else if (it->second != v) {
        store_.replace_version(k, ts, v);
      }
    }
    for (const auto& [k, v] : final_trace.writes) store_.commit_version(k, ts);
    txn.read_set = std::move(final_trace.read_set);
    txn.write_set = std::move(final_trace.write_set);
    txn.executed = true;
    out.committed_fallback.push_back(txn.tid);
  }
}

BatchOutcome Engine::run_batch(std::vector<Transaction>& batch) {
  BatchOutcome out;
  out.metrics.batch_size = batch.size();
  out.epoch = store_.epoch();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].tid != i + 1) throw UsageError("batch tids must be dense from 1");
  }
  if (batch.size() > kMaxMtfsBatch) throw ConfigError("batch exceeds " + std::to_string(kMaxMtfsBatch));
  if (batch.empty()) return out;
  if (store_.state() != EpochState::kClean) throw PhaseError("run_batch needs a clean epoch boundary");

  for (auto& t : batch) t.reset_execution();
  auto t0 = Clock::now();
  const Snapshot snap = store_.begin_epoch();
  out.epoch = snap.epoch;
  const auto pred = prediction_phase(models_, batch, store_.schema(), config_);
  out.deferred = pred.deferred;
  out.metrics.deferred = pred.deferred.size();
  out.metrics.predicted_pairs = pred.predicted_pairs;
  out.metrics.timings.prediction = seconds_since(t0);

  t0 = Clock::now();
  const auto exec = execution_phase(store_, snap, batch, pred.scheduled, config_.worker_threads);
  out.metrics.timings.execution = seconds_since(t0);

  t0 = Clock::now();
  const auto decision = commit_decision(batch, config_.protocol, config_.worker_threads);
  out.metrics.actual_pairs = decision.conflict_pairs;
  for (const auto tid : decision.committed) {
    const Timestamp ts = Timestamp::main(snap.epoch, tid);
    for (const auto& k : batch[tid - 1].write_set) store_.commit_version(k, ts);
  }
  for (const auto tid : decision.rejected) {
    const Timestamp ts = Timestamp::main(snap.epoch, tid);
    for (const auto& k : batch[tid - 1].write_set) store_.retract_version(k, ts);
    batch[tid - 1].reset_execution();
  }
  out.committed_main = decision.committed;
  std::vector<Tid> second;
  second.insert(second.end(), pred.deferred.begin(), pred.deferred.end());
  second.insert(second.end(), decision.rejected.begin(), decision.rejected.end());
  second.insert(second.end(), exec.failed.begin(), exec.failed.end());
  std::sort(second.begin(), second.end());
  out.metrics.timings.commit = seconds_since(t0);

  t0 = Clock::now();
  if (uses_fallback(config_.protocol)) {
    fallback_phase(batch, second, out);
  } else {
    out.aborted = second;
  }
  out.metrics.timings.fallback = seconds_since(t0);

  t0 = Clock::now();
  store_.finish_epoch();
  out.metrics.reclaimed = store_.garbage_collect(snap.epoch + 1);
  out.metrics.timings.gc = seconds_since(t0);

  std::sort(out.aborted.begin(), out.aborted.end());
  if (out.committed_main.size() + out.committed_fallback.size() + out.aborted.size() != batch.size()) {
    throw InvariantError("batch outcome does not partition the batch");
  }
  if (trace_) {
    json line = out.to_json();
    json txns = json::array();
    std::vector<const char*> disp(batch.size() + 1, "aborted");
    for (const auto t : out.committed_main) disp[t] = "main";
    for (const auto t : out.committed_fallback) disp[t] = "fallback";
    for (const auto& t : batch) txns.push_back({{"tid", t.tid}, {"uid", t.uid}, {"disposition", disp[t.tid]}});
    line["txns"] = txns;
    *trace_ << line.dump() << '\n';
  }
  return out;
}

BatchOutcome run_batch(const EngineConfig& config, MvStore& store, const ModelSet* models,
                       std::vector<Transaction>& batch) {
  Engine engine(config, store, models);
  return engine.run_batch(batch);
}

}  // namespace detdb
