#include "fixtures.hpp"

#include <algorithm>

namespace detdb::testkit {

TableSchema regime_schema() {
  TableSchema t;
  t.id = 3;
  t.name = "t3";
  t.attributes = {{"A1", 1, 10}, {"B1", 1, 10}, {"B2", 1, 12}, {"A2", 1, 10}, {"B3", 1, 10}};
  return t;
}

RecordSet regime_records() {
  constexpr std::size_t A1 = 0, B1 = 1, B2 = 2, A2 = 3, B3 = 4;
  DependenceSpec d;
  d.sampling = DependenceSpec::Sampling::kFactorial;
  const std::vector<std::pair<std::size_t, Interval>> left{{A2, {1, 5}}, {B2, {7, 12}}};
  const std::vector<std::pair<std::size_t, Interval>> low{{A2, {6, 10}}, {B3, {1, 5}}};
  const std::vector<std::pair<std::size_t, Interval>> high{{A2, {6, 10}}, {B3, {6, 10}}};
  d.relations.push_back({B1, A1, 1, 0, 0.0, left});
  d.relations.push_back({B3, A1, 1, 0, 0.0, left});
  d.relations.push_back({B1, A1, 1, 0, 0.0, low});
  d.relations.push_back({B2, B1, 1, 1, 0.0, low});
  d.relations.push_back({B1, A1, 1, 0, 0.0, high});
  d.relations.push_back({B2, B1, 1, 2, 0.0, high});
  return gen_correlated_table(regime_schema(), 120000, d, 1);
}

Predicate regime_q1() { return Predicate(3, {{1, 8}, {1, 3}, {1, 8}, {2, 7}, {2, 5}}); }

Predicate regime_q2() { return Predicate(3, {{1, 6}, {1, 8}, {7, 8}, {6, 7}, {1, 10}}); }

TableSchema items_schema(std::size_t rows) {
  TableSchema t;
  t.id = kItems;
  t.name = "items";
  t.attributes = {{"id", 0, static_cast<AttrValue>(rows) - 1}, {"a", 0, 999}, {"b", 0, 999}, {"c", 0, 999}, {"d", 0, 999}};
  t.key_attribute = 0;
  t.record_count = rows;
  return t;
}

RecordSet correlated_items(const TableSchema& schema, std::uint64_t seed) {
  DependenceSpec d;
  Relation r;
  r.target = 2;
  r.source = 1;
  r.noise = 15.0;
  d.relations.push_back(r);
  return gen_correlated_table(schema, schema.record_count, d, seed);
}

std::vector<std::pair<Predicate, Predicate>> range_query_pairs(const TableSchema& schema, std::size_t count,
                                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<Predicate, Predicate>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const AttrValue a = rng.uniform_int(0, 950);
    const AttrValue wa = rng.uniform_int(20, 120);
    const AttrValue b = std::clamp<AttrValue>(a + rng.uniform_int(-150, 150), 0, 950);
    const AttrValue wb = rng.uniform_int(20, 120);
    Predicate p = Predicate::full(schema).with_bound(1, {a, a + wa}).with_bound(2, {b, b + wb});
    if (rng.bernoulli(0.5)) {
      const AttrValue d = rng.uniform_int(0, 900);
      p = p.with_bound(4, {d, d + rng.uniform_int(10, 100)});
    }
    const AttrValue sa = rng.uniform_int(-80, 80);
    const AttrValue sb = rng.uniform_int(-80, 80);
    Predicate q = p.with_bound(1, {p.bound(1).lo + sa, p.bound(1).hi + sa})
                      .with_bound(2, {p.bound(2).lo + sb, p.bound(2).hi + sb});
    out.emplace_back(std::move(p), std::move(q));
  }
  return out;
}

Schema kv_schema(std::size_t keys) {
  TableSchema t;
  t.id = 0;
  t.name = "kv";
  t.attributes = {{"k", 0, static_cast<AttrValue>(keys) - 1}, {"v", -1000000000, 1000000000}};
  t.key_attribute = 0;
  t.record_count = keys;
  return Schema({t});
}

void load_kv(MvStore& store, std::size_t keys) {
  for (std::size_t k = 0; k < keys; ++k) {
    const auto pk = static_cast<std::int64_t>(k);
    store.load_record(kv(pk), {pk, pk});
  }
}

Key kv(std::int64_t pk) { return Key{0, pk}; }

Transaction txn(Tid tid, std::vector<Operation> ops, const Schema& schema) {
  Transaction t;
  t.tid = tid;
  t.uid = tid;
  t.ops = std::move(ops);
  derive_summaries(t, schema);
  return t;
}

Operation read(std::int64_t pk) { return PointRead{kv(pk)}; }

Operation write(std::int64_t pk, AttrValue v) { return PointWrite{kv(pk), {pk, v}}; }

Operation add(std::int64_t pk, AttrValue amount) {
  std::vector<Interval> b{{pk, pk}, {-1000000000, 1000000000}};
  return RangeWrite{Predicate(0, std::move(b)), 1, amount};
}

DependencyDicts random_dicts(Rng& rng, std::size_t n, double war_waw_p, double raw_p) {
  DependencyDicts d(n);
  for (Tid i = 2; i <= n; ++i) {
    for (Tid j = 1; j < i; ++j) {
      if (rng.bernoulli(war_waw_p)) {
        d.war_waw[i].push_back(j);
        (rng.bernoulli(0.5) ? d.war[i] : d.waw[i]).push_back(j);
      }
      if (rng.bernoulli(raw_p)) d.raw[i].push_back(j);
    }
  }
  return d;
}

std::vector<std::vector<bool>> dfs_reachability(const DependencyDicts& d) {
  const std::size_t n = d.n;
  std::vector<std::vector<bool>> reach(n + 1, std::vector<bool>(n + 1, false));
  for (Tid s = 1; s <= n; ++s) {
    std::vector<Tid> stack{s};
    reach[s][s] = true;
    while (!stack.empty()) {
      const Tid v = stack.back();
      stack.pop_back();
      for (const Tid w : d.war_waw[v]) {
        if (!reach[s][w]) {
          reach[s][w] = true;
          stack.push_back(w);
        }
      }
    }
  }
  return reach;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> precedence_edges(const DependencyDicts& d) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (Tid i = 1; i <= d.n; ++i) {
    for (const Tid j : d.war_waw[i]) e.emplace_back(j - 1, i - 1);
    for (const Tid j : d.raw[i]) e.emplace_back(i - 1, j - 1);
  }
  return e;
}

}  // namespace detdb::testkit
