#include "detdb/mtfs.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "detdb/error.hpp"
#include "parallel.hpp"

namespace detdb {

using nlohmann::json;

namespace {

void sort_unique(std::vector<Tid>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::vector<Tid> merged(const std::vector<Tid>& a, const std::vector<Tid>& b) {
  std::vector<Tid> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

json dict_json(const std::vector<std::vector<Tid>>& d) {
  json j = json::object();
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (!d[i].empty()) j[std::to_string(i)] = d[i];
  }
  return j;
}

void check_batch_size(std::size_t n) {
  if (n > kMaxMtfsBatch) {
    throw ConfigError("batch of " + std::to_string(n) + " exceeds the dense matrix bound of " +
                      std::to_string(kMaxMtfsBatch));
  }
}

template <class Fn>
void for_each_bit(const std::uint64_t* a, const std::uint64_t* b, std::size_t words, Fn&& fn) {
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t x = a[w] & b[w];
    while (x) {
      const int bit = std::countr_zero(x);
      fn(static_cast<Tid>(w * 64 + static_cast<std::size_t>(bit) + 1));
      x &= x - 1;
    }
  }
}

}  // namespace

std::size_t DependencyDicts::conflict_pairs() const {
  std::size_t total = 0;
  for (std::size_t i = 1; i <= n; ++i) total += merged(raw[i], war_waw[i]).size();
  return total;
}

void DependencyDicts::check() const {
  auto check_one = [&](const std::vector<std::vector<Tid>>& d, const char* name) {
    if (d.size() != n + 1) throw InvariantError(std::string("dependency dict ") + name + " has wrong size");
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t k = 0; k < d[i].size(); ++k) {
        if (d[i][k] == 0 || d[i][k] >= i || (k > 0 && d[i][k - 1] >= d[i][k])) {
          throw InvariantError(std::string("dependency dict ") + name + " malformed at tid " +
                               std::to_string(i));
        }
      }
    }
  };
  check_one(war_waw, "war_waw");
  check_one(raw, "raw");
  check_one(war, "war");
  check_one(waw, "waw");
}

json DependencyDicts::to_json() const {
  return {{"n", n},
          {"war_waw", dict_json(war_waw)},
          {"raw", dict_json(raw)},
          {"war", dict_json(war)},
          {"waw", dict_json(waw)}};
}

DependencyDicts build_dependency_dicts(std::span<const Transaction> txns, std::size_t n) {
  struct Access {
    Key key;
    Tid tid;
    bool write;
  };
  std::vector<Access> acc;
  for (const auto& t : txns) {
    if (!t.executed) continue;
    if (t.tid == 0 || t.tid > n) throw UsageError("tid " + std::to_string(t.tid) + " outside batch");
    for (const auto& k : t.read_set) acc.push_back({k, t.tid, false});
    for (const auto& k : t.write_set) acc.push_back({k, t.tid, true});
  }
  std::sort(acc.begin(), acc.end(), [](const Access& a, const Access& b) {
    if (a.key != b.key) return a.key < b.key;
    if (a.tid != b.tid) return a.tid < b.tid;
    return a.write < b.write;
  });

  DependencyDicts d(n);
  std::vector<Tid> readers, writers;
  for (std::size_t lo = 0; lo < acc.size();) {
    std::size_t hi = lo;
    readers.clear();
    writers.clear();
    while (hi < acc.size() && acc[hi].key == acc[lo].key) {
      (acc[hi].write ? writers : readers).push_back(acc[hi].tid);
      ++hi;
    }
    lo = hi;
    if (writers.empty()) continue;
    for (const Tid w : writers) {
      for (const Tid r : readers) {
        if (r > w) d.raw[r].push_back(w);
        if (r < w) d.war[w].push_back(r);
      }
      for (const Tid w2 : writers) {
        if (w2 >= w) break;
        d.waw[w].push_back(w2);
      }
    }
  }
  for (std::size_t i = 1; i <= n; ++i) {
    sort_unique(d.raw[i]);
    sort_unique(d.war[i]);
    sort_unique(d.waw[i]);
    d.war_waw[i] = merged(d.war[i], d.waw[i]);
  }
  return d;
}

DependencyMatrix::DependencyMatrix(std::size_t n) : n_(n), m_(n * n, 0), row_min_(n + 1, 0) {}

json DependencyMatrix::to_json() const {
  json rows = json::array();
  for (Tid i = 1; i <= n_; ++i) {
    json r = json::array();
    for (Tid j = 1; j <= n_; ++j) r.push_back(at(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

DependencyMatrix build_matrix(const DependencyDicts& dicts, std::size_t n) {
  check_batch_size(n);
  if (dicts.n != n) throw UsageError("dependency dicts cover a different batch size");
  constexpr std::uint32_t kCap = std::numeric_limits<std::uint32_t>::max();
  DependencyMatrix m(n);
  for (Tid i = 1; i <= n; ++i) {
    Tid lo = i;
    for (const Tid j : dicts.war_waw[i]) {
      const Tid jlo = m.row_min(j);
      for (Tid k = jlo; k <= j; ++k) {
        const std::uint32_t a = m.at(i, k);
        const std::uint32_t b = m.at(j, k);
        m.at(i, k) = (a > kCap - b) ? kCap : a + b;
      }
      lo = std::min(lo, jlo);
    }
    m.at(i, i) = 1;
    m.set_row_min(i, lo);
  }
  return m;
}

ReachabilityMatrix::ReachabilityMatrix(std::size_t n)
    : n_(n), words_((n + 63) / 64), rows_(n * words_, 0), cols_(n * words_, 0) {}

bool ReachabilityMatrix::reaches(Tid i, Tid j) const {
  const std::size_t b = j - 1;
  return (row(i)[b / 64] >> (b % 64)) & 1U;
}

void ReachabilityMatrix::build_columns() {
  std::fill(cols_.begin(), cols_.end(), 0);
  for (Tid i = 1; i <= n_; ++i) {
    const std::uint64_t* r = row(i);
    const std::size_t bi = i - 1;
    for (std::size_t w = 0; w < words_; ++w) {
      std::uint64_t x = r[w];
      while (x) {
        const std::size_t k = w * 64 + static_cast<std::size_t>(std::countr_zero(x));
        cols_[k * words_ + bi / 64] |= std::uint64_t{1} << (bi % 64);
        x &= x - 1;
      }
    }
  }
}

ReachabilityMatrix ReachabilityMatrix::from_counts(const DependencyMatrix& m) {
  ReachabilityMatrix r(m.size());
  for (Tid i = 1; i <= m.size(); ++i) {
    auto* row = r.mutable_row(i);
    for (Tid j = 1; j <= i; ++j) {
      if (m.at(i, j) > 0) row[(j - 1) / 64] |= std::uint64_t{1} << ((j - 1) % 64);
    }
  }
  r.build_columns();
  return r;
}

ReachabilityMatrix build_reachability(const DependencyDicts& dicts, std::size_t n) {
  check_batch_size(n);
  if (dicts.n != n) throw UsageError("dependency dicts cover a different batch size");
  ReachabilityMatrix r(n);
  for (Tid i = 1; i <= n; ++i) {
    auto* row = r.mutable_row(i);
    for (const Tid j : dicts.war_waw[i]) {
      const auto* src = r.row(j);
      const std::size_t last = (j - 1) / 64;
      for (std::size_t w = 0; w <= last; ++w) row[w] |= src[w];
    }
    row[(i - 1) / 64] |= std::uint64_t{1} << ((i - 1) % 64);
  }
  r.build_columns();
  return r;
}

bool AbortSet::contains(Tid t) const { return std::binary_search(tids.begin(), tids.end(), t); }

json AbortSet::to_json() const {
  return {{"tids", tids}, {"paths", paths}, {"path_count", path_count}, {"repaired", repaired}};
}

Digraph precedence_graph(const DependencyDicts& dicts) {
  Digraph g(dicts.n + 1);
  for (Tid i = 1; i <= dicts.n; ++i) {
    for (const Tid j : dicts.war_waw[i]) g.add_edge(j, i);
    for (const Tid j : dicts.raw[i]) g.add_edge(i, j);
  }
  g.finalize();
  return g;
}

AbortSet extract_abort_set(const ReachabilityMatrix& reach, const DependencyDicts& dicts,
                           const MtfsOptions& opts) {
  const std::size_t n = reach.size();
  if (dicts.n != n) throw UsageError("matrix and dicts cover different batch sizes");
  const std::size_t words = reach.words();
  const std::size_t threads = std::max<std::size_t>(1, opts.threads);

  std::vector<bool> candidate(n + 1, false);
  for (Tid i = 1; i <= n; ++i) candidate[i] = !dicts.raw[i].empty() && !dicts.war_waw[i].empty();

  // Pass two, first sweep: path frequencies.
  std::vector<std::vector<std::uint64_t>> freq_parts(threads, std::vector<std::uint64_t>(n + 1, 0));
  std::vector<std::size_t> count_parts(threads, 0);
  std::vector<std::vector<std::vector<Tid>>> path_parts(threads);
  detail::ranges(n, threads, [&](std::size_t lo, std::size_t hi, std::size_t slot) {
    auto& freq = freq_parts[slot];
    for (Tid i = static_cast<Tid>(lo); i <= hi; ++i) {
      for (const Tid j : dicts.raw[i]) {
        if (!reach.reaches(i, j)) continue;
        ++count_parts[slot];
        std::vector<Tid>* keep = nullptr;
        if (opts.keep_paths) keep = &path_parts[slot].emplace_back();
        for_each_bit(reach.row(i), reach.col(j), words, [&](Tid k) {
          ++freq[k];
          if (keep) keep->push_back(k);
        });
      }
    }
  });
  std::vector<std::uint64_t> freq(n + 1, 0);
  AbortSet out;
  for (std::size_t t = 0; t < threads; ++t) {
    for (std::size_t k = 0; k <= n; ++k) freq[k] += freq_parts[t][k];
    out.path_count += count_parts[t];
    for (auto& p : path_parts[t]) out.paths.push_back(std::move(p));
  }

  // Greedy cover in static frequency order: a path is covered by its
  // first candidate member in that order.
  std::vector<Tid> order;
  for (Tid k = 1; k <= n; ++k) {
    if (candidate[k] && freq[k] > 0) order.push_back(k);
  }
  std::sort(order.begin(), order.end(), [&](Tid a, Tid b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a > b;
  });
  constexpr std::uint32_t kNoRank = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> rank(n + 1, kNoRank);
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<std::uint32_t>(r);

  std::vector<std::vector<char>> pick_parts(threads, std::vector<char>(n + 1, 0));
  detail::ranges(n, threads, [&](std::size_t lo, std::size_t hi, std::size_t slot) {
    auto& pick = pick_parts[slot];
    for (Tid i = static_cast<Tid>(lo); i <= hi; ++i) {
      for (const Tid j : dicts.raw[i]) {
        if (!reach.reaches(i, j)) continue;
        std::uint32_t best = kNoRank;
        for_each_bit(reach.row(i), reach.col(j), words, [&](Tid k) { best = std::min(best, rank[k]); });
        if (best == kNoRank) throw InvariantError("dependency path without a reorder candidate");
        pick[order[best]] = 1;
      }
    }
  });
  std::vector<bool> selected(n + 1, false);
  for (std::size_t t = 0; t < threads; ++t) {
    for (std::size_t k = 0; k <= n; ++k) {
      if (pick_parts[t][k]) selected[k] = true;
    }
  }

  // Repair: cycles through more than one reordered edge escape the path
  // cover; break each remaining one at its highest tid.
  const Digraph g = precedence_graph(dicts);
  std::vector<bool> active(n + 1, true);
  active[0] = false;
  for (Tid k = 1; k <= n; ++k) {
    if (selected[k]) active[k] = false;
  }
  for (;;) {
    bool changed = false;
    for (const auto& comp : strongly_connected_components(g, active)) {
      if (comp.size() < 2) continue;
      const Tid top = comp.back();
      if (!candidate[top]) throw InvariantError("cycle maximum outside the reorder candidates");
      selected[top] = true;
      active[top] = false;
      ++out.repaired;
      changed = true;
    }
    if (!changed) break;
  }
  for (Tid k = 1; k <= n; ++k) {
    if (selected[k]) out.tids.push_back(k);
  }
  return out;
}

AbortSet extract_abort_set(const DependencyMatrix& matrix, const DependencyDicts& dicts,
                           const MtfsOptions& opts) {
  return extract_abort_set(ReachabilityMatrix::from_counts(matrix), dicts, opts);
}

AbortSet run_mtfs(const DependencyDicts& dicts, const MtfsOptions& opts) {
  return extract_abort_set(build_reachability(dicts, dicts.n), dicts, opts);
}

bool eligible_rule1(Tid tid, const DependencyDicts& dicts) {
  if (tid == 0 || tid > dicts.n) throw UsageError("tid outside batch");
  return dicts.raw[tid].empty();
}

bool eligible_rule2(Tid tid, const DependencyDicts& dicts) {
  if (tid == 0 || tid > dicts.n) throw UsageError("tid outside batch");
  return dicts.raw[tid].empty() || dicts.war_waw[tid].empty();
}

double commit_probability(std::uint64_t i, std::uint64_t reads, std::uint64_t writes,
                          std::uint64_t table_size, CommitRule rule) {
  if (table_size == 0) throw ConfigError("commit_probability: table size must be positive");
  if (writes > table_size || reads > table_size) {
    throw ConfigError("commit_probability: access set larger than the table");
  }
  const double t = static_cast<double>(table_size);
  const double r = static_cast<double>(reads);
  const double w = static_cast<double>(writes);
  const double n = static_cast<double>(i);
  const double no_raw = std::pow(1.0 - w / t, n * r);
  if (rule == CommitRule::kRule1) return no_raw;
  const double no_war = std::pow(1.0 - r / t, n * w);
  const double no_waw = std::pow(1.0 - w / t, n * w);
  return 1.0 - (1.0 - no_raw) * (1.0 - no_war * no_waw);
}

json mtfs_debug_dump(const DependencyDicts& dicts, const DependencyMatrix* matrix,
                     const AbortSet& set) {
  json j = {{"dicts", dicts.to_json()}, {"paths", set.paths}, {"abort_set", set.tids}};
  if (matrix) j["matrix"] = matrix->to_json();
  return j;
}

}  // namespace detdb
