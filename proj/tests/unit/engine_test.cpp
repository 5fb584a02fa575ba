#include <gtest/gtest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "detdb/engine.hpp"
#include "detdb/error.hpp"
#include "detdb/oracle.hpp"
#include "detdb/workloads.hpp"
#include "fixtures.hpp"

namespace detdb {
namespace {

using testkit::add;
using testkit::kv;
using testkit::read;
using testkit::txn;
using testkit::write;

constexpr std::size_t kKeys = 64;

class EngineTest : public ::testing::Test {
 protected:
  EngineTest() : schema(testkit::kv_schema(kKeys)), store(schema) { testkit::load_kv(store, kKeys); }

  EngineConfig config(Protocol p) const {
    EngineConfig c;
    c.protocol = p;
    return c;
  }

  // Dense batch: tids without ops run an independent read.
  std::vector<Transaction> batch(std::size_t n, std::vector<std::pair<Tid, std::vector<Operation>>> ops) const {
    std::vector<Transaction> b;
    for (Tid t = 1; t <= n; ++t) {
      std::vector<Operation> o{read(static_cast<std::int64_t>(kKeys - t))};
      for (auto& [tid, list] : ops) {
        if (tid == t) o = list;
      }
      b.push_back(txn(t, o, schema));
    }
    return b;
  }

  StoreDump replay(const StoreDump& before, const std::vector<Transaction>& b, const BatchOutcome& out) const {
    const auto g = oracle::build_conflict_graph(b, out.committed_main, out.committed_fallback);
    const auto order = oracle::topological_order(g);
    EXPECT_TRUE(order.has_value());
    std::vector<const Transaction*> seq;
    for (const auto t : order.value_or(std::vector<Tid>{})) seq.push_back(&b[t - 1]);
    return oracle::serial_replay(before, seq);
  }

  Schema schema;
  MvStore store;
};

TEST_F(EngineTest, EmptyBatchLeavesStoreUntouched) {
  const auto before = store.dump();
  std::vector<Transaction> b;
  const auto out = run_batch(config(Protocol::kPredictive), store, nullptr, b);
  EXPECT_EQ(out.committed(), 0u);
  EXPECT_TRUE(out.aborted.empty());
  EXPECT_EQ(store.dump(), before);
  EXPECT_EQ(store.epoch(), 0u);
}

TEST_F(EngineTest, DisjointTransactionsCommitInMain) {
  auto b = batch(2, {{1, {write(1, 10)}}, {2, {write(2, 20)}}});
  const auto out = run_batch(config(Protocol::kPredictive), store, nullptr, b);
  EXPECT_EQ(out.committed_main, (std::vector<Tid>{1, 2}));
  EXPECT_EQ(store.dump().at(kv(1)), (AttributeVector{1, 10}));
}

TEST_F(EngineTest, ReorderedReadCommitsEverything) {
  const auto before = store.dump();
  auto b = batch(3, {{1, {write(5, 100)}}, {2, {read(5), write(6, 7)}}, {3, {write(5, 300)}}});
  const auto out = run_batch(config(Protocol::kPredictive), store, nullptr, b);
  EXPECT_EQ(out.committed_main, (std::vector<Tid>{1, 2, 3}));
  EXPECT_TRUE(out.committed_fallback.empty());
  EXPECT_EQ(store.dump().at(kv(5)), (AttributeVector{5, 300}));
  EXPECT_EQ(store.dump(), replay(before, b, out));
}

TEST_F(EngineTest, CyclicReadersGoToFallback) {
  const auto before = store.dump();
  auto b = batch(6, {{1, {read(10), write(20, 1)}},
                     {2, {read(11), write(21, 2)}},
                     {3, {read(20), write(10, 3)}},
                     {6, {read(21), write(11, 6)}}});
  const auto out = run_batch(config(Protocol::kPredictive), store, nullptr, b);
  EXPECT_EQ(out.committed_main, (std::vector<Tid>{1, 2, 4, 5}));
  EXPECT_EQ(out.committed_fallback, (std::vector<Tid>{3, 6}));
  EXPECT_EQ(store.dump(), replay(before, b, out));
}

TEST_F(EngineTest, Rule1CommitsPureWaw) {
  auto b = batch(2, {{1, {write(3, 1)}}, {2, {write(3, 2)}}});
  const auto out = run_batch(config(Protocol::kRule1Only), store, nullptr, b);
  EXPECT_EQ(out.committed_main, (std::vector<Tid>{1, 2}));
  EXPECT_EQ(store.dump().at(kv(3)), (AttributeVector{3, 2}));
}

TEST_F(EngineTest, FallbackAppliesInTidOrder) {
  const auto before = store.dump();
  auto b = batch(7, {{1, {write(0, 9)}}, {3, {read(0), add(8, 5)}}, {7, {read(0), add(8, 100)}}});
  const auto out = run_batch(config(Protocol::kRule1Only), store, nullptr, b);
  EXPECT_EQ(out.committed_fallback, (std::vector<Tid>{3, 7}));
  EXPECT_EQ(store.dump().at(kv(8)), (AttributeVector{8, 8 + 5 + 100}));
  const auto& later = b[6];
  EXPECT_TRUE(std::binary_search(later.read_set.begin(), later.read_set.end(), kv(8)));
  EXPECT_EQ(store.dump(), replay(before, b, out));
}

TEST_F(EngineTest, FallbackWriterOrder) {
  auto b = batch(7, {{1, {write(0, 9)}}, {3, {read(0), write(8, 3)}}, {7, {read(0), write(8, 7)}}});
  const auto out = run_batch(config(Protocol::kRule1Only), store, nullptr, b);
  EXPECT_EQ(out.committed_fallback, (std::vector<Tid>{3, 7}));
  EXPECT_EQ(store.dump().at(kv(8)), (AttributeVector{8, 7}));
}

TEST_F(EngineTest, HotTransactionIsDeferred) {
  std::vector<Operation> hot;
  for (std::int64_t k = 1; k <= 10; ++k) hot.push_back(write(k, 0));
  std::vector<std::pair<Tid, std::vector<Operation>>> ops{{1, hot}};
  for (Tid t = 2; t <= 11; ++t) ops.push_back({t, {read(t - 1)}});
  auto b = batch(11, ops);
  auto c = config(Protocol::kPredictive);
  c.prediction_enabled = true;
  c.defer_threshold = 5;
  const auto pred = prediction_phase(nullptr, b, schema, c);
  EXPECT_EQ(pred.deferred, (std::vector<Tid>{1}));
  EXPECT_EQ(pred.scheduled.size(), 10u);
  EXPECT_EQ(pred.degree[1], 10u);
  const auto out = run_batch(c, store, nullptr, b);
  EXPECT_EQ(out.deferred, (std::vector<Tid>{1}));
  EXPECT_EQ(out.committed_fallback, (std::vector<Tid>{1}));
  EXPECT_EQ(out.committed_main.size(), 10u);
}

TEST_F(EngineTest, PredictionOffOrHighThresholdIsIdentity) {
  auto b = batch(4, {{1, {write(1, 1)}}, {2, {read(1)}}, {3, {read(1)}}, {4, {read(1)}}});
  auto c = config(Protocol::kPredictive);
  EXPECT_EQ(prediction_phase(nullptr, b, schema, c).scheduled, (std::vector<Tid>{1, 2, 3, 4}));
  c.prediction_enabled = true;
  c.defer_threshold = 1000;
  const auto p = prediction_phase(nullptr, b, schema, c);
  EXPECT_EQ(p.scheduled, (std::vector<Tid>{1, 2, 3, 4}));
  EXPECT_TRUE(p.deferred.empty());
  EXPECT_EQ(p.predicted_pairs, 3u);
}

TEST_F(EngineTest, ExecutionInstallsOnlyWrites) {
  auto b = batch(3, {{1, {read(1)}}, {2, {write(4, 1)}}, {3, {write(4, 2)}}});
  const auto snap = store.begin_epoch();
  const auto before = store.version_count();
  execution_phase(store, snap, b, {1}, 1);
  EXPECT_EQ(store.version_count(), before);
  execution_phase(store, snap, b, {2, 3}, 2);
  EXPECT_EQ(store.find_chain(kv(4))->length(), 3u);
  EXPECT_EQ(store.snapshot_read(snap, kv(4)), (AttributeVector{4, 4}));
}

TEST_F(EngineTest, RangeReadCollectsMatchingKeys) {
  const Predicate p(0, {{10, 40}, {15, 30}});
  auto b = batch(1, {{1, {RangeRead{p}}}});
  const auto snap = store.begin_epoch();
  execution_phase(store, snap, b, {1}, 1);
  KeySet truth;
  for (const auto& [k, v] : store.dump()) {
    if (p.matches(v)) truth.push_back(k);
  }
  EXPECT_EQ(b[0].read_set, truth);
}

TEST_F(EngineTest, UnknownKeyAborts) {
  auto b = batch(2, {{1, {read(kKeys + 5)}}});
  const auto out = run_batch(config(Protocol::kPredictive), store, nullptr, b);
  EXPECT_EQ(out.aborted, (std::vector<Tid>{1}));
  auto b2 = batch(2, {{1, {read(kKeys + 5)}}});
  EXPECT_EQ(run_batch(config(Protocol::kAria), store, nullptr, b2).aborted, (std::vector<Tid>{1}));
}

TEST_F(EngineTest, RejectsSparseTidsAndOpenEpoch) {
  auto b = batch(2, {});
  b[1].tid = 5;
  EXPECT_THROW(run_batch(config(Protocol::kPredictive), store, nullptr, b), UsageError);
  store.begin_epoch();
  auto ok = batch(2, {});
  EXPECT_THROW(run_batch(config(Protocol::kPredictive), store, nullptr, ok), PhaseError);
}

TEST_F(EngineTest, AriaAbortsIntoNextBatch) {
  auto b = batch(2, {{1, {write(1, 1)}}, {2, {read(1), write(2, 2)}}});
  const auto out = run_batch(config(Protocol::kAria), store, nullptr, b);
  EXPECT_EQ(out.committed_main, (std::vector<Tid>{1}));
  EXPECT_EQ(out.aborted, (std::vector<Tid>{2}));
  EXPECT_EQ(store.max_chain_length(), 1u);
}

TEST_F(EngineTest, TraceWritesOneLinePerBatch) {
  std::ostringstream os;
  Engine e(config(Protocol::kPredictive), store);
  e.set_trace(&os);
  for (int i = 0; i < 3; ++i) {
    auto b = batch(3, {{1, {write(1, i)}}});
    e.run_batch(b);
  }
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_NO_THROW(nlohmann::json::parse(line));
    ++lines;
  }
  EXPECT_EQ(lines, 3);
}

TEST(EngineDeterminism, OutcomeIndependentOfThreads) {
  WorkloadSpec s;
  s.keys_per_partition = 500;
  s.zipf_theta = 0.9;
  std::string ref;
  StoreDump ref_dump;
  for (const std::size_t threads : {1u, 3u, 8u}) {
    MvStore store(workload_schema(s));
    populate_store(store, s);
    EngineConfig c;
    c.worker_threads = threads;
    c.prediction_enabled = true;
    std::string all;
    for (std::uint64_t e = 1; e <= 3; ++e) {
      auto b = gen_batch(s, 100, e);
      all += run_batch(c, store, nullptr, b).canonical_json().dump();
    }
    if (threads == 1) {
      ref = all;
      ref_dump = store.dump();
    } else {
      EXPECT_EQ(all, ref);
      EXPECT_EQ(store.dump(), ref_dump);
    }
  }
}

TEST(EngineConfigTest, JsonRoundTripAndErrors) {
  EngineConfig c;
  c.protocol = Protocol::kFga;
  c.worker_threads = 3;
  EXPECT_EQ(EngineConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(EngineConfig::from_json(nlohmann::json{{"protocol", "optimistic"}}), ConfigError);
  EXPECT_THROW(EngineConfig::from_json(nlohmann::json{{"worker_threads", 0}}), ConfigError);
  EXPECT_THROW(EngineConfig::from_json(nlohmann::json{{"batch_size", 5000}}), ConfigError);
  for (const auto p : {Protocol::kPredictive, Protocol::kRule1Only, Protocol::kRule2Only, Protocol::kAria,
                       Protocol::kAriaFallback, Protocol::kFga}) {
    EXPECT_EQ(protocol_from_string(to_string(p)), p);
  }
  EXPECT_FALSE(uses_fallback(Protocol::kAria));
  EXPECT_TRUE(uses_fallback(Protocol::kAriaFallback));
}

}  // namespace
}  // namespace detdb
