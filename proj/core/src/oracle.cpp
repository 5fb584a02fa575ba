#include "detdb/oracle.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>

#include "detdb/error.hpp"

namespace detdb::oracle {

namespace {

bool overlap(const KeySet& a, const KeySet& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

KeySet sorted(KeySet k) {
  std::sort(k.begin(), k.end());
  k.erase(std::unique(k.begin(), k.end()), k.end());
  return k;
}

}  // namespace

ConflictGraph build_conflict_graph(const std::vector<Transaction>& batch, const std::vector<Tid>& main,
                                   const std::vector<Tid>& fallback) {
  ConflictGraph g;
  std::vector<const Transaction*> order;
  auto find = [&](Tid t) -> const Transaction& {
    for (const auto& x : batch) {
      if (x.tid == t) return x;
    }
    throw UsageError("conflict graph: unknown tid " + std::to_string(t));
  };
  std::vector<Tid> m = main, f = fallback;
  std::sort(m.begin(), m.end());
  std::sort(f.begin(), f.end());
  for (const auto t : m) order.push_back(&find(t));
  for (const auto t : f) order.push_back(&find(t));
  std::vector<KeySet> reads, writes;
  for (const auto* t : order) {
    g.nodes.push_back(t->tid);
    reads.push_back(sorted(t->read_set));
    writes.push_back(sorted(t->write_set));
  }
  for (std::size_t q = 0; q < order.size(); ++q) {
    for (std::size_t p = 0; p < q; ++p) {
      DependencySet forward, backward;
      const bool both_main = q < m.size();
      if (overlap(reads[q], writes[p])) (both_main ? backward : forward).add(DependencyKind::kRaw);
      if (overlap(writes[q], reads[p])) forward.add(DependencyKind::kWar);
      if (overlap(writes[q], writes[p])) forward.add(DependencyKind::kWaw);
      if (forward.bits()) g.edges.push_back({order[p]->tid, order[q]->tid, forward});
      if (backward.bits()) g.edges.push_back({order[q]->tid, order[p]->tid, backward});
    }
  }
  return g;
}

std::optional<std::vector<Tid>> topological_order(const ConflictGraph& g) {
  const std::size_t n = g.nodes.size();
  std::vector<std::size_t> pos_of_tid;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.nodes[i] >= pos_of_tid.size()) pos_of_tid.resize(g.nodes[i] + 1, n);
    pos_of_tid[g.nodes[i]] = i;
  }
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& e : g.edges) {
    const auto a = pos_of_tid.at(e.from), b = pos_of_tid.at(e.to);
    out[a].push_back(b);
    ++indeg[b];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) ready.push(i);
  }
  std::vector<Tid> order;
  while (!ready.empty()) {
    const auto v = ready.top();
    ready.pop();
    order.push_back(g.nodes[v]);
    for (const auto w : out[v]) {
      if (--indeg[w] == 0) ready.push(w);
    }
  }
  if (order.size() != n) return std::nullopt;
  return order;
}

bool check_serializable(const ConflictGraph& g) { return topological_order(g).has_value(); }

StoreDump serial_replay(StoreDump state, const std::vector<const Transaction*>& order) {
  for (const auto* t : order) {
    for (const auto& op : t->ops) {
      if (const auto* w = std::get_if<PointWrite>(&op)) {
        state[w->key] = w->value;
      } else if (const auto* rw = std::get_if<RangeWrite>(&op)) {
        if (rw->pred.is_empty()) continue;
        for (auto it = state.lower_bound(Key{rw->pred.table(), std::numeric_limits<std::int64_t>::min()});
             it != state.end() && it->first.table == rw->pred.table(); ++it) {
          if (rw->pred.matches(it->second)) it->second[rw->attribute] += rw->amount;
        }
      }
    }
  }
  return state;
}

StoreDump serial_replay(StoreDump state, const std::vector<Transaction>& order) {
  std::vector<const Transaction*> ptrs;
  for (const auto& t : order) ptrs.push_back(&t);
  return serial_replay(std::move(state), ptrs);
}

bool is_acyclic(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                const std::vector<bool>& removed) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& [a, b] : edges) {
    if (a >= n || b >= n) throw UsageError("edge endpoint out of range");
    if (!removed.empty() && (removed[a] || removed[b])) continue;
    adj[a].push_back(b);
  }
  std::vector<int> color(n, 0);
  std::function<bool(std::uint32_t)> dfs = [&](std::uint32_t v) {
    color[v] = 1;
    for (const auto w : adj[v]) {
      if (color[w] == 1) return false;
      if (color[w] == 0 && !dfs(w)) return false;
    }
    color[v] = 2;
    return true;
  };
  for (std::uint32_t v = 0; v < n; ++v) {
    if (color[v] == 0 && !dfs(v)) return false;
  }
  return true;
}

std::size_t min_fvs_exact(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                          std::size_t max_nodes) {
  if (n > max_nodes) throw UsageError("min_fvs_exact: graph has more than " + std::to_string(max_nodes) + " nodes");
  for (std::size_t k = 0; k <= n; ++k) {
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
    do {
      if (is_acyclic(n, edges, pick)) return k;
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return n;
}

std::vector<std::vector<std::uint64_t>> count_paths(const std::vector<std::vector<Tid>>& down) {
  const std::size_t n = down.size();
  std::vector<std::vector<std::uint64_t>> counts(n, std::vector<std::uint64_t>(n, 0));
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t start, std::size_t v) {
    ++counts[start][v];
    for (const auto w : down[v]) {
      if (w >= v) throw UsageError("count_paths: edges must point to smaller ids");
      walk(start, w);
    }
  };
  for (std::size_t i = 0; i < n; ++i) walk(i, i);
  return counts;
}

bool conflict_ground_truth(const RecordSet& records, const Predicate& a, const Predicate& b) {
  const Predicate x = intersect_predicates(a, b);
  if (x.is_empty()) return false;
  if (x.arity() != records.arity()) throw UsageError("predicate arity differs from records");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (x.matches(records.row(i))) return true;
  }
  return false;
}

}  // namespace detdb::oracle
