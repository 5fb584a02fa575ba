#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detdb/baselines.hpp"
#include "detdb/oracle.hpp"
#include "experiment.hpp"
#include "fixtures.hpp"

namespace {

using namespace detdb;
using Clock = std::chrono::steady_clock;

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

WorkloadSpec ycsb(std::size_t keys, double theta, std::uint64_t seed) {
  WorkloadSpec s;
  s.kind = WorkloadKind::kYcsbA;
  s.keys_per_partition = keys;
  s.zipf_theta = theta;
  s.rng_seed = seed;
  s.normalize();
  return s;
}

EngineConfig engine(Protocol p, std::size_t threads, std::size_t batch) {
  EngineConfig c;
  c.protocol = p;
  c.worker_threads = threads;
  c.batch_size = batch;
  return c;
}

Result determinism() {
  const auto spec = ycsb(10000, 0.9, 11);
  std::vector<std::string> traces;
  for (const std::size_t threads : {1u, 2u, 4u, 8u}) {
    MvStore store(workload_schema(spec));
    populate_store(store, spec);
    const auto cfg = engine(Protocol::kPredictive, threads, 200);
    std::ostringstream trace;
    for (std::uint64_t e = 0; e < 100; ++e) {
      auto batch = gen_batch(spec, 200, e);
      const auto out = run_batch(cfg, store, nullptr, batch);
      trace << out.canonical_json().dump() << ' ' << bench::dump_checksum(store.dump()) << '\n';
    }
    trace << store.dump_json().dump();
    traces.push_back(trace.str());
  }
  std::size_t mismatches = 0;
  for (std::size_t i = 1; i < traces.size(); ++i) mismatches += traces[i] != traces[0];
  return {mismatches == 0, "100 batches x threads {1,2,4,8}, mismatching runs " + std::to_string(mismatches)};
}

Result serializability() {
  struct Lane {
    WorkloadSpec spec;
    std::unique_ptr<MvStore> store;
    std::uint64_t epoch = 0;
  };
  std::vector<Lane> lanes;
  for (const double theta : {0.0, 0.9}) {
    WorkloadSpec a = ycsb(2000, theta, 21);
    a.rmw_fraction = 0.5;
    WorkloadSpec b = ycsb(2000, theta, 22);
    b.kind = WorkloadKind::kYcsbB;
    b.rmw_fraction = 1.0;
    b.normalize();
    WorkloadSpec c;
    c.kind = WorkloadKind::kTpccLite;
    c.partitions = 2;
    c.keys_per_partition = 2000;
    c.zipf_theta = theta;
    c.rng_seed = 23;
    c.normalize();
    for (auto& s : {a, b, c}) {
      Lane lane{s, std::make_unique<MvStore>(workload_schema(s)), 0};
      populate_store(*lane.store, s);
      lanes.push_back(std::move(lane));
    }
  }
  Rng rng(2024);
  std::size_t violations = 0;
  std::size_t committed = 0;
  for (std::size_t b = 0; b < 1000; ++b) {
    auto& lane = lanes[b % lanes.size()];
    auto cfg = engine(Protocol::kPredictive, 2, 200);
    cfg.prediction_enabled = (b / lanes.size()) % 2 == 1;
    auto batch = gen_batch(lane.spec, 10 + rng.below(191), lane.epoch++);
    const auto before = lane.store->dump();
    const auto out = run_batch(cfg, *lane.store, nullptr, batch);
    committed += out.committed();
    const auto g = oracle::build_conflict_graph(batch, out.committed_main, out.committed_fallback);
    const auto order = oracle::topological_order(g);
    if (!oracle::check_serializable(g) || !order) {
      ++violations;
      continue;
    }
    std::vector<const Transaction*> seq;
    for (const Tid t : *order) seq.push_back(&batch[t - 1]);
    if (oracle::serial_replay(before, seq) != lane.store->dump()) ++violations;
  }
  return {violations == 0, "1000 batches, " + std::to_string(committed) + " commits, violations " +
                               std::to_string(violations)};
}

Result mtfs_soundness() {
  Rng rng(31);
  std::size_t reach_err = 0;
  std::size_t cyclic_after = 0;
  for (std::size_t k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng.below(64);
    const auto d = testkit::random_dicts(rng, n, rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3));
    const auto dfs = testkit::dfs_reachability(d);
    const auto counts = build_matrix(d, n);
    const auto bits = build_reachability(d, n);
    for (Tid i = 1; i <= n; ++i) {
      for (Tid j = 1; j <= n; ++j) {
        if ((counts.at(i, j) != 0) != dfs[i][j] || bits.reaches(i, j) != dfs[i][j]) ++reach_err;
      }
    }
    const auto set = run_mtfs(d);
    std::vector<bool> removed(n, false);
    for (const Tid t : set.tids) removed[t - 1] = true;
    if (!oracle::is_acyclic(n, testkit::precedence_edges(d), removed)) ++cyclic_after;
  }
  return {reach_err == 0 && cyclic_after == 0, "1000 instances, reachability mismatches " +
                                                    std::to_string(reach_err) + ", cyclic after removal " +
                                                    std::to_string(cyclic_after)};
}

Result mtfs_path_counts() {
  Rng rng(41);
  std::size_t errors = 0;
  for (std::size_t k = 0; k < 500; ++k) {
    const std::size_t n = 1 + rng.below(12);
    const auto d = testkit::random_dicts(rng, n, rng.uniform(0.1, 0.7), 0.0);
    const auto m = build_matrix(d, n);
    const auto truth = oracle::count_paths(d.war_waw);
    for (Tid i = 1; i <= n; ++i) {
      for (Tid j = 1; j <= n; ++j) errors += m.at(i, j) != truth[i][j];
    }
  }
  return {errors == 0, "500 DAGs, mismatching entries " + std::to_string(errors)};
}

Result mtfs_vs_fvs() {
  Rng rng(51);
  std::size_t graphs = 0;
  std::size_t below = 0;
  double ratio = 0.0;
  while (graphs < 200) {
    const std::size_t n = 2 + rng.below(11);
    const auto d = testkit::random_dicts(rng, n, rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5));
    const auto edges = testkit::precedence_edges(d);
    if (oracle::is_acyclic(n, edges)) continue;
    ++graphs;
    const auto exact = oracle::min_fvs_exact(n, edges);
    const auto got = run_mtfs(d).tids.size();
    below += got < exact;
    ratio += static_cast<double>(got) / static_cast<double>(exact);
  }
  return {below == 0, "200 cyclic graphs, below optimum " + std::to_string(below) + ", mean ratio " +
                          fmt("%.3f", ratio / 200.0)};
}

Result rule_nesting() {
  const auto spec = ycsb(10000, 0.9, 61);
  std::size_t violations = 0;
  std::array<std::size_t, 4> totals{};
  std::string first_bad;
  for (std::uint64_t e = 0; e < 200; ++e) {
    MvStore store(workload_schema(spec));
    populate_store(store, spec);
    auto batch = gen_batch(spec, 500, e);
    const auto snap = store.begin_epoch();
    std::vector<Tid> all(batch.size());
    std::iota(all.begin(), all.end(), Tid{1});
    execution_phase(store, snap, batch, all, 2);
    const auto r3 = commit_decision(batch, Protocol::kPredictive, 2).committed.size();
    const auto r2 = commit_decision(batch, Protocol::kRule2Only, 2).committed.size();
    const auto r1 = commit_decision(batch, Protocol::kRule1Only, 2).committed.size();
    const auto aria = batch.size() - aria_validate(build_dependency_dicts(batch, batch.size()), true).size();
    if (!(r3 >= r2 && r2 >= r1 && r1 >= aria)) {
      ++violations;
      first_bad += " [" + std::to_string(e) + ": " + std::to_string(r3) + "/" + std::to_string(r2) + "/" +
                   std::to_string(r1) + "/" + std::to_string(aria) + "]";
    }
    totals[0] += r3;
    totals[1] += r2;
    totals[2] += r1;
    totals[3] += aria;
  }
  return {violations == 0, "200 batches of 500, commits rule3 " + std::to_string(totals[0]) + " rule2 " +
                               std::to_string(totals[1]) + " rule1 " + std::to_string(totals[2]) + " aria " +
                               std::to_string(totals[3]) + ", violations " + std::to_string(violations) + first_bad};
}

std::vector<std::uint32_t> distinct(Rng& rng, std::size_t k, std::uint32_t t) {
  std::vector<std::uint32_t> out;
  while (out.size() < k) {
    const auto x = static_cast<std::uint32_t>(rng.below(t));
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

Result commit_formula() {
  constexpr std::uint32_t kT = 1000;
  constexpr std::size_t kR = 4;
  constexpr std::size_t kW = 4;
  constexpr std::size_t kTrials = 100000;
  Rng rng(71);
  double worst = 0.0;
  std::string detail;
  std::vector<std::uint32_t> read_mark(kT), write_mark(kT);
  for (const std::size_t i : {10u, 50u, 100u}) {
    std::size_t ok1 = 0;
    std::size_t ok2 = 0;
    for (std::uint32_t trial = 1; trial <= kTrials; ++trial) {
      for (std::size_t j = 0; j < i; ++j) {
        for (const auto x : distinct(rng, kR, kT)) read_mark[x] = trial;
        for (const auto x : distinct(rng, kW, kT)) write_mark[x] = trial;
      }
      bool raw = false;
      bool war_waw = false;
      for (const auto x : distinct(rng, kR, kT)) raw |= write_mark[x] == trial;
      for (const auto x : distinct(rng, kW, kT)) war_waw |= read_mark[x] == trial || write_mark[x] == trial;
      ok1 += !raw;
      ok2 += !raw || !war_waw;
    }
    const double mc1 = static_cast<double>(ok1) / kTrials;
    const double mc2 = static_cast<double>(ok2) / kTrials;
    const double f1 = commit_probability(i, kR, kW, kT, CommitRule::kRule1);
    const double f2 = commit_probability(i, kR, kW, kT, CommitRule::kRule2);
    worst = std::max({worst, std::abs(mc1 - f1), std::abs(mc2 - f2)});
    detail += " i=" + std::to_string(i) + " rule1 " + fmt("%.4f", f1) + "/" + fmt("%.4f", mc1) + " rule2 " +
              fmt("%.4f", f2) + "/" + fmt("%.4f", mc2);
  }
  return {worst <= 0.01, "formula/simulated" + detail + ", max gap " + fmt("%.4f", worst)};
}

Result aspn_example() {
  const auto schema = testkit::regime_schema();
  const auto model = build_model(schema, testkit::regime_records(), AspnConfig{});
  const auto q1 = testkit::regime_q1();
  const auto q2 = testkit::regime_q2();
  const double p = infer_probability(model, intersect_predicates(q1, q2));
  const bool conflict = predict_conflict(model, q1, q2, 120000, 0.5);
  return {p == 0.0 && !conflict, "Pr " + fmt("%.6g", p) + ", predicted conflict " + (conflict ? "true" : "false")};
}

bench::PredictionMetrics score(const AspnModel& model, const RecordSet& records,
                               const std::vector<std::pair<Predicate, Predicate>>& pairs) {
  bench::Confusion c;
  for (const auto& [a, b] : pairs) {
    const bool guess = predict_conflict(model, a, b, static_cast<double>(records.size()), 0.5);
    const bool truth = oracle::conflict_ground_truth(records, a, b);
    if (guess && truth) ++c.tp;
    else if (guess) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return bench::compute_prediction_metrics(c);
}

Result aspn_quality() {
  const auto schema = testkit::items_schema(10000);
  const auto records = testkit::correlated_items(schema, 81);
  const auto model = build_model(schema, records, AspnConfig{});
  const auto m = score(model, records, testkit::range_query_pairs(schema, 200, 82));
  return {m.precision >= 0.85 && m.recall >= 0.85 && !m.precision_undefined && !m.recall_undefined,
          "precision " + fmt("%.3f", m.precision) + ", recall " + fmt("%.3f", m.recall)};
}

Result aspn_overhead() {
  const auto schema = testkit::items_schema(100000);
  const auto records = testkit::correlated_items(schema, 91);
  const auto model = build_model(schema, records, AspnConfig{});
  const auto pairs = testkit::range_query_pairs(schema, 200, 92);
  std::size_t guesses = 0;
  std::size_t truths = 0;
  auto t0 = Clock::now();
  for (const auto& [a, b] : pairs) guesses += predict_conflict(model, a, b, 100000.0, 0.5);
  const double t_p = seconds_since(t0);
  t0 = Clock::now();
  for (const auto& [a, b] : pairs) truths += oracle::conflict_ground_truth(records, a, b);
  const double t_e = seconds_since(t0);
  return {t_p <= 0.1 * t_e, "T_p " + fmt("%.5f", t_p) + " s, T_e " + fmt("%.5f", t_e) + " s, ratio " +
                                fmt("%.4f", t_p / t_e) + " (" + std::to_string(guesses) + "/" +
                                std::to_string(truths) + " conflicts)"};
}

Result skew_throughput() {
  bench::ExperimentConfig c;
  c.engine = engine(Protocol::kPredictive, 4, 1000);
  c.workload = ycsb(10000, 0.999, 0);
  c.epochs = 10;
  c.apply_seed(101);
  const auto fs = bench::run_experiment(c);
  c.engine.protocol = Protocol::kAria;
  const auto aria = bench::run_experiment(c);
  std::size_t worse = 0;
  for (std::size_t e = 0; e < fs.rows.size(); ++e) {
    worse += !(fs.rows[e].outcome.commit_rate() > aria.rows[e].outcome.commit_rate());
  }
  const double speedup = fs.txns_per_sec() / std::max(aria.txns_per_sec(), 1e-12);
  return {speedup >= 1.5 && worse == 0 && fs.rows.size() == aria.rows.size(),
          "predictive " + fmt("%.1f", fs.txns_per_sec()) + " tps rate " + fmt("%.3f", fs.commit_rate()) + ", aria " +
              fmt("%.1f", aria.txns_per_sec()) + " tps rate " + fmt("%.4f", aria.commit_rate()) + ", speedup " +
              fmt("%.1f", speedup) + ", epochs not better " + std::to_string(worse)};
}

Result gc_bounded() {
  const auto spec = ycsb(10000, 0.9, 111);
  MvStore store(workload_schema(spec));
  populate_store(store, spec);
  const auto baseline = store.version_count();
  const auto cfg = engine(Protocol::kPredictive, 2, 200);
  std::size_t bad = 0;
  std::size_t peak = 0;
  for (std::uint64_t e = 0; e < 1000; ++e) {
    auto batch = gen_batch(spec, 200, e);
    run_batch(cfg, store, nullptr, batch);
    peak = std::max(peak, store.version_count());
    bad += store.max_chain_length() != 1 || store.version_count() != store.chain_count() ||
           store.version_count() > baseline;
  }
  return {bad == 0, "1000 batches, versions " + std::to_string(baseline) + " -> peak " + std::to_string(peak) +
                        ", bad epochs " + std::to_string(bad)};
}

Result incremental_update() {
  const auto schema = testkit::items_schema(10000);
  const auto pairs = testkit::range_query_pairs(schema, 200, 82);
  auto records = testkit::correlated_items(schema, 81);
  auto model = build_model(schema, records, AspnConfig{});
  const auto before = score(model, records, pairs);
  Rng rng(121);
  double worst_mass = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto fresh = testkit::correlated_items(schema, 1000 + k);
    const std::size_t ins = rng.below(301);
    const std::size_t del = rng.below(301);
    RecordDelta delta{RecordSet(records.arity()), RecordSet(records.arity())};
    for (std::size_t i = 0; i < ins; ++i) delta.inserts.push_back(fresh.row(rng.below(fresh.size())));
    std::vector<std::size_t> keep(records.size());
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    for (std::size_t i = 0; i < del; ++i) {
      const std::size_t pos = rng.below(keep.size());
      delta.deletes.push_back(records.row(keep[pos]));
      keep[pos] = keep.back();
      keep.pop_back();
    }
    std::sort(keep.begin(), keep.end());
    RecordSet next = records.select(keep);
    for (std::size_t i = 0; i < delta.inserts.size(); ++i) next.push_back(delta.inserts.row(i));
    records = std::move(next);
    model = update_incremental(model, delta);
    worst_mass = std::max(worst_mass, std::abs(infer_probability(model, Predicate::full(schema)) - 1.0));
  }
  const auto after = score(model, records, pairs);
  return {worst_mass <= 1e-6 && after.precision >= before.precision - 0.05,
          "mass error " + fmt("%.2e", worst_mass) + ", precision " + fmt("%.3f", before.precision) + " -> " +
              fmt("%.3f", after.precision) + ", recall " + fmt("%.3f", before.recall) + " -> " +
              fmt("%.3f", after.recall) + ", rows " + std::to_string(records.size())};
}

struct Criterion {
  const char* name;
  std::function<Result()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"determinism", determinism},         {"serializability", serializability},
      {"mtfs_soundness", mtfs_soundness},   {"mtfs_path_counts", mtfs_path_counts},
      {"mtfs_vs_fvs", mtfs_vs_fvs},         {"rule_nesting", rule_nesting},
      {"commit_formula", commit_formula},   {"aspn_example", aspn_example},
      {"aspn_quality", aspn_quality},       {"aspn_overhead", aspn_overhead},
      {"skew_throughput", skew_throughput}, {"gc_bounded", gc_bounded},
      {"incremental_update", incremental_update}};

  CLI::App app{"Acceptance suite"};
  std::vector<std::size_t> only;
  app.add_option("--only", only, "Criterion numbers to run (1-13)")->check(CLI::Range(1, 13));
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) {
    only.resize(criteria.size());
    std::iota(only.begin(), only.end(), std::size_t{1});
  }

  int failures = 0;
  for (const auto n : only) {
    const auto& c = criteria[n - 1];
    const auto t0 = Clock::now();
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::printf("%s %02zu %s: %s [%.1f s]\n", r.pass ? "PASS" : "FAIL", n, c.name, r.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
