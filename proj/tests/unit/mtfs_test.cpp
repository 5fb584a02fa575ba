#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "detdb/baselines.hpp"
#include "detdb/error.hpp"
#include "detdb/graph.hpp"
#include "detdb/mtfs.hpp"
#include "detdb/oracle.hpp"
#include "fixtures.hpp"

namespace detdb {
namespace {

using testkit::kv;

Transaction executed(Tid tid, KeySet reads, KeySet writes) {
  Transaction t;
  t.tid = tid;
  t.read_set = std::move(reads);
  t.write_set = std::move(writes);
  t.executed = true;
  return t;
}

DependencyDicts dicts_of(std::size_t n, std::vector<std::pair<Tid, std::vector<Tid>>> war_waw,
                         std::vector<std::pair<Tid, std::vector<Tid>>> raw = {}) {
  DependencyDicts d(n);
  for (auto& [i, js] : war_waw) {
    d.war_waw[i] = js;
    d.waw[i] = js;
  }
  for (auto& [i, js] : raw) d.raw[i] = js;
  return d;
}

TEST(Dicts, DisjointBatchIsEmpty) {
  std::vector<Transaction> b{executed(1, {kv(1)}, {kv(2)}), executed(2, {kv(3)}, {kv(4)})};
  const auto d = build_dependency_dicts(b, 2);
  EXPECT_EQ(d.conflict_pairs(), 0u);
}

TEST(Dicts, ReadAfterWrite) {
  std::vector<Transaction> b{executed(1, {}, {kv(1)}), executed(2, {kv(1)}, {})};
  const auto d = build_dependency_dicts(b, 2);
  EXPECT_EQ(d.raw[2], (std::vector<Tid>{1}));
  EXPECT_TRUE(d.war_waw[2].empty());
}

TEST(Dicts, MatchesPairwiseClassification) {
  std::vector<Transaction> b{executed(1, {kv(1)}, {}), executed(2, {}, {kv(1)}), executed(3, {}, {kv(1)})};
  const auto d = build_dependency_dicts(b, 3);
  EXPECT_EQ(d.war_waw[2], (std::vector<Tid>{1}));
  EXPECT_EQ(d.war_waw[3], (std::vector<Tid>{1, 2}));
  EXPECT_TRUE(d.raw[2].empty());
  EXPECT_TRUE(d.raw[3].empty());
  Rng rng(3);
  std::vector<Transaction> big;
  for (Tid t = 1; t <= 30; ++t) {
    KeySet r, w;
    for (int k = 0; k < 3; ++k) r.push_back(kv(static_cast<std::int64_t>(rng.below(20))));
    for (int k = 0; k < 2; ++k) w.push_back(kv(static_cast<std::int64_t>(rng.below(20))));
    normalize(r);
    normalize(w);
    big.push_back(executed(t, r, w));
  }
  const auto dd = build_dependency_dicts(big, 30);
  for (Tid i = 2; i <= 30; ++i) {
    for (Tid j = 1; j < i; ++j) {
      const auto s = classify_dependency(big[j - 1], big[i - 1]);
      const bool raw = std::binary_search(dd.raw[i].begin(), dd.raw[i].end(), j);
      const bool ww = std::binary_search(dd.war_waw[i].begin(), dd.war_waw[i].end(), j);
      EXPECT_EQ(raw, s.has(DependencyKind::kRaw));
      EXPECT_EQ(ww, s.has(DependencyKind::kWar) || s.has(DependencyKind::kWaw));
    }
  }
}

TEST(Matrix, NoEdgesIsIdentity) {
  const auto m = build_matrix(DependencyDicts(4), 4);
  for (Tid i = 1; i <= 4; ++i) {
    for (Tid j = 1; j <= 4; ++j) EXPECT_EQ(m.at(i, j), i == j ? 1u : 0u);
  }
}

TEST(Matrix, TransitivePath) {
  const auto m = build_matrix(dicts_of(3, {{2, {1}}, {3, {2}}}), 3);
  EXPECT_EQ(m.at(3, 1), 1u);
}

TEST(Matrix, DiamondCountsTwoPaths) {
  const auto d = dicts_of(4, {{2, {1}}, {3, {1}}, {4, {2, 3}}});
  const auto m = build_matrix(d, 4);
  EXPECT_EQ(m.at(4, 1), 2u);
  const auto oracle_counts = oracle::count_paths(d.war_waw);
  EXPECT_EQ(oracle_counts[4][1], 2u);
}

TEST(Matrix, OversizedBatchRejected) {
  EXPECT_THROW(build_matrix(DependencyDicts(kMaxMtfsBatch + 1), kMaxMtfsBatch + 1), ConfigError);
}

TEST(AbortSet, NoRawMeansNothingToAbort) {
  const auto s = run_mtfs(dicts_of(3, {{2, {1}}, {3, {2}}}));
  EXPECT_TRUE(s.tids.empty());
  EXPECT_EQ(s.path_count, 0u);
}

TEST(AbortSet, CycleBrokenAtHigherTid) {
  const auto d = dicts_of(3, {{2, {1}}, {3, {2}}}, {{3, {1}}});
  MtfsOptions o;
  o.keep_paths = true;
  const auto s = run_mtfs(d, o);
  ASSERT_EQ(s.paths.size(), 1u);
  EXPECT_EQ(s.paths[0], (std::vector<Tid>{1, 2, 3}));
  EXPECT_EQ(s.tids, (std::vector<Tid>{3}));
  std::vector<bool> removed(3, false);
  removed[2] = true;
  EXPECT_FALSE(oracle::is_acyclic(3, testkit::precedence_edges(d)));
  EXPECT_TRUE(oracle::is_acyclic(3, testkit::precedence_edges(d), removed));
}

TEST(AbortSet, PureReorderCommits) {
  const auto d = dicts_of(4, {{3, {2}}}, {{4, {1}}});
  const auto s = run_mtfs(d);
  EXPECT_TRUE(s.tids.empty());
  EXPECT_EQ(s.path_count, 0u);
}

TEST(AbortSet, ParallelExtractionMatchesSerial) {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const auto d = testkit::random_dicts(rng, 40, 0.08, 0.05);
    MtfsOptions one;
    MtfsOptions four;
    four.threads = 4;
    EXPECT_EQ(run_mtfs(d, one).tids, run_mtfs(d, four).tids);
  }
}

TEST(AbortSet, CountAndBitsetPathsAgree) {
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    const auto d = testkit::random_dicts(rng, 30, 0.1, 0.05);
    const auto a = extract_abort_set(build_matrix(d, d.n), d);
    const auto b = extract_abort_set(build_reachability(d, d.n), d);
    EXPECT_EQ(a.tids, b.tids);
  }
}

TEST(Rules, Rule1ToleratesWarWaw) {
  const auto d = dicts_of(3, {{3, {1, 2}}});
  EXPECT_TRUE(eligible_rule1(3, d));
  EXPECT_TRUE(eligible_rule1(1, d));
  EXPECT_FALSE(eligible_rule1(2, dicts_of(2, {}, {{2, {1}}})));
}

TEST(Rules, Rule2) {
  EXPECT_TRUE(eligible_rule2(2, dicts_of(2, {}, {{2, {1}}})));
  EXPECT_FALSE(eligible_rule2(3, dicts_of(3, {{3, {2}}}, {{3, {1}}})));
  EXPECT_TRUE(eligible_rule2(2, dicts_of(2, {{2, {1}}})));
}

TEST(Rules, CommitProbabilityEdges) {
  EXPECT_DOUBLE_EQ(commit_probability(0, 4, 4, 1000, CommitRule::kRule1), 1.0);
  EXPECT_DOUBLE_EQ(commit_probability(0, 4, 4, 1000, CommitRule::kRule2), 1.0);
  EXPECT_DOUBLE_EQ(commit_probability(70, 4, 0, 1000, CommitRule::kRule1), 1.0);
  EXPECT_DOUBLE_EQ(commit_probability(70, 4, 0, 1000, CommitRule::kRule2), 1.0);
  EXPECT_NEAR(commit_probability(50, 4, 4, 1000, CommitRule::kRule1), std::pow(0.996, 200), 1e-12);
  EXPECT_NEAR(commit_probability(50, 4, 4, 1000, CommitRule::kRule1), 0.4487, 1e-4);
  EXPECT_THROW(commit_probability(1, 4, 2000, 1000, CommitRule::kRule1), ConfigError);
}

TEST(Rules, CommitProbabilityMonotone) {
  for (std::uint64_t i = 1; i < 200; i += 7) {
    for (const auto rule : {CommitRule::kRule1, CommitRule::kRule2}) {
      EXPECT_LE(commit_probability(i + 1, 4, 4, 1000, rule), commit_probability(i, 4, 4, 1000, rule));
      EXPECT_LE(commit_probability(i, 5, 4, 1000, rule), commit_probability(i, 4, 4, 1000, rule));
      EXPECT_LE(commit_probability(i, 4, 5, 1000, rule), commit_probability(i, 4, 4, 1000, rule));
    }
  }
}

TEST(Graph, TarjanFindsComponents) {
  Digraph g(5);
  g.add_edge(0, 1);
  g.add_edge(1, 0);
  g.add_edge(1, 2);
  g.add_edge(3, 4);
  g.add_edge(4, 3);
  g.finalize();
  const auto c = strongly_connected_components(g);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0], (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(c[1], (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(c[2], (std::vector<std::uint32_t>{3, 4}));
  EXPECT_FALSE(is_acyclic(g));
  EXPECT_TRUE(is_acyclic(g, {true, false, true, false, true}));
}

TEST(Graph, SelfLoopIsCycle) {
  Digraph g(2);
  g.add_edge(1, 1);
  g.finalize();
  EXPECT_FALSE(is_acyclic(g));
}

TEST(Aria, ReorderRules) {
  DependencyDicts war(2);
  war.war[2] = {1};
  war.war_waw[2] = {1};
  EXPECT_TRUE(aria_validate(war, true).empty());
  EXPECT_TRUE(aria_validate(dicts_of(2, {}, {{2, {1}}}), true).empty());
  EXPECT_EQ(aria_validate(dicts_of(2, {}, {{2, {1}}}), false), (std::vector<Tid>{2}));
  EXPECT_EQ(aria_validate(dicts_of(3, {{3, {2}}}, {{3, {1}}}), true), (std::vector<Tid>{3}));
}

TEST(Fga, AcyclicGraphKeepsAll) {
  EXPECT_TRUE(fga_reorder(dicts_of(3, {{2, {1}}, {3, {2}}})).empty());
}

TEST(Fga, TwoCycleAbortsHigherTid) {
  const auto d = dicts_of(2, {{2, {1}}}, {{2, {1}}});
  EXPECT_EQ(fga_reorder(d), (std::vector<Tid>{2}));
}

TEST(Fga, SingleComponentNeedsOneAbort) {
  const auto d = dicts_of(4, {{2, {1}}, {3, {2}}, {4, {3}}}, {{4, {1}}});
  const auto out = fga_reorder(d);
  EXPECT_EQ(out.size(), 1u);
  EXPECT_EQ(oracle::min_fvs_exact(4, testkit::precedence_edges(d)), 1u);
}

TEST(Fga, AlwaysAcyclicAndNeverBelowMtfs) {
  Rng rng(9);
  for (int it = 0; it < 100; ++it) {
    const auto d = testkit::random_dicts(rng, 25, 0.1, 0.08);
    const auto out = fga_reorder(d);
    std::vector<bool> removed(d.n, false);
    for (const auto t : out) removed[t - 1] = true;
    EXPECT_TRUE(oracle::is_acyclic(d.n, testkit::precedence_edges(d), removed));
    EXPECT_LE(run_mtfs(d).tids.size(), aria_validate(d, true).size());
  }
}

}  // namespace
}  // namespace detdb
