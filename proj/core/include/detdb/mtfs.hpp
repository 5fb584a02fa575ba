#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detdb/graph.hpp"
#include "detdb/model.hpp"

namespace detdb {

// Direct dependencies of each tid on earlier tids, indexed by tid in
// [0, n]; slot 0 is unused. Lists are ascending and duplicate-free.
struct DependencyDicts {
  std::size_t n = 0;
  std::vector<std::vector<Tid>> war_waw;
  std::vector<std::vector<Tid>> raw;
  std::vector<std::vector<Tid>> war;
  std::vector<std::vector<Tid>> waw;

  explicit DependencyDicts(std::size_t batch = 0)
      : n(batch), war_waw(batch + 1), raw(batch + 1), war(batch + 1), waw(batch + 1) {}

  // Number of distinct (earlier, later) pairs with any dependency.
  std::size_t conflict_pairs() const;
  void check() const;
  nlohmann::json to_json() const;
};

// Unexecuted transactions contribute nothing. Tids must lie in [1, n].
DependencyDicts build_dependency_dicts(std::span<const Transaction> txns, std::size_t n);

// Path counts m[i][j] over WAR/WAW edges; saturating at 2^32 - 1.
class DependencyMatrix {
 public:
  explicit DependencyMatrix(std::size_t n = 0);

  std::size_t size() const { return n_; }
  std::uint32_t at(Tid i, Tid j) const { return m_[index(i, j)]; }
  std::uint32_t& at(Tid i, Tid j) { return m_[index(i, j)]; }
  Tid row_min(Tid i) const { return row_min_[i]; }
  void set_row_min(Tid i, Tid v) { row_min_[i] = v; }
  nlohmann::json to_json() const;

 private:
  std::size_t index(Tid i, Tid j) const { return (static_cast<std::size_t>(i) - 1) * n_ + (j - 1); }

  std::size_t n_ = 0;
  std::vector<std::uint32_t> m_;
  std::vector<Tid> row_min_;
};

// Largest batch the dense representation accepts.
inline constexpr std::size_t kMaxMtfsBatch = 4096;

DependencyMatrix build_matrix(const DependencyDicts& dicts, std::size_t n);

// Zero/non-zero pattern of the path-count matrix, row and column bitsets.
class ReachabilityMatrix {
 public:
  explicit ReachabilityMatrix(std::size_t n = 0);
  static ReachabilityMatrix from_counts(const DependencyMatrix& m);

  std::size_t size() const { return n_; }
  std::size_t words() const { return words_; }
  bool reaches(Tid i, Tid j) const;
  const std::uint64_t* row(Tid i) const { return &rows_[(i - 1) * words_]; }
  const std::uint64_t* col(Tid j) const { return &cols_[(j - 1) * words_]; }
  std::uint64_t* mutable_row(Tid i) { return &rows_[(i - 1) * words_]; }
  void build_columns();

 private:
  std::size_t n_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> rows_;
  std::vector<std::uint64_t> cols_;
};

ReachabilityMatrix build_reachability(const DependencyDicts& dicts, std::size_t n);

struct AbortSet {
  std::vector<Tid> tids;                // ascending
  std::vector<std::vector<Tid>> paths;  // filled when requested
  std::size_t path_count = 0;
  std::size_t repaired = 0;  // tids added by the acyclicity repair

  bool contains(Tid t) const;
  nlohmann::json to_json() const;
};

struct MtfsOptions {
  bool keep_paths = false;
  std::size_t threads = 1;
};

AbortSet extract_abort_set(const DependencyMatrix& matrix, const DependencyDicts& dicts,
                           const MtfsOptions& opts = {});
AbortSet extract_abort_set(const ReachabilityMatrix& reach, const DependencyDicts& dicts,
                           const MtfsOptions& opts = {});

// Convenience: dicts -> reachability -> abort set.
AbortSet run_mtfs(const DependencyDicts& dicts, const MtfsOptions& opts = {});

// WAR/WAW edges j -> i plus reordered RAW edges i -> j; node ids are tids.
Digraph precedence_graph(const DependencyDicts& dicts);

bool eligible_rule1(Tid tid, const DependencyDicts& dicts);
bool eligible_rule2(Tid tid, const DependencyDicts& dicts);

enum class CommitRule { kRule1, kRule2 };

double commit_probability(std::uint64_t i, std::uint64_t reads, std::uint64_t writes,
                          std::uint64_t table_size, CommitRule rule);

nlohmann::json mtfs_debug_dump(const DependencyDicts& dicts, const DependencyMatrix* matrix,
                               const AbortSet& set);

}  // namespace detdb
