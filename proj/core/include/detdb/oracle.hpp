#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "detdb/aspn.hpp"
#include "detdb/model.hpp"
#include "detdb/mvstore.hpp"

namespace detdb::oracle {

struct ConflictEdge {
  Tid from = 0;
  Tid to = 0;
  DependencySet kinds;
};

// Nodes in execution position order. Edges point from the transaction that
// must come first to the one that must come second.
struct ConflictGraph {
  std::vector<Tid> nodes;
  std::vector<ConflictEdge> edges;
};

// `main` transactions read the epoch snapshot, so a read of an earlier
// writer's key orders the reader first; `fallback` transactions follow all
// of them in tid order and saw every earlier write.
ConflictGraph build_conflict_graph(const std::vector<Transaction>& batch, const std::vector<Tid>& main,
                                   const std::vector<Tid>& fallback);

bool check_serializable(const ConflictGraph& g);
// Kahn's algorithm preferring the earliest position; nullopt on a cycle.
std::optional<std::vector<Tid>> topological_order(const ConflictGraph& g);

StoreDump serial_replay(StoreDump state, const std::vector<const Transaction*>& order);
StoreDump serial_replay(StoreDump state, const std::vector<Transaction>& order);

// Smallest vertex set whose removal leaves the graph acyclic, by
// enumeration.
std::size_t min_fvs_exact(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                          std::size_t max_nodes = 12);
bool is_acyclic(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                const std::vector<bool>& removed = {});

// down[i] lists j < i; counts[i][j] is the number of distinct downward paths
// from i to j found by explicit enumeration, with counts[i][i] = 1.
std::vector<std::vector<std::uint64_t>> count_paths(const std::vector<std::vector<Tid>>& down);

bool conflict_ground_truth(const RecordSet& records, const Predicate& a, const Predicate& b);

}  // namespace detdb::oracle
