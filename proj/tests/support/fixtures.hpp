#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "detdb/aspn.hpp"
#include "detdb/engine.hpp"
#include "detdb/model.hpp"
#include "detdb/mtfs.hpp"
#include "detdb/mvstore.hpp"
#include "detdb/rng.hpp"
#include "detdb/workloads.hpp"

namespace detdb::testkit {

// Five-attribute table whose regimes switch on A2 and then on B2 or B3.
TableSchema regime_schema();
RecordSet regime_records();
// Attribute order A1, B1, B2, A2, B3.
Predicate regime_q1();
Predicate regime_q2();

// id, a, b = a + N(0, 15), c, d over [0, 999].
TableSchema items_schema(std::size_t rows);
RecordSet correlated_items(const TableSchema& schema, std::uint64_t seed);
// Random overlapping boxes on (a, b), half of them also narrowed on d.
std::vector<std::pair<Predicate, Predicate>> range_query_pairs(const TableSchema& schema, std::size_t count,
                                                               std::uint64_t seed);

// One table of `keys` records {k, v}; k is the primary key, v starts at k.
Schema kv_schema(std::size_t keys);
void load_kv(MvStore& store, std::size_t keys);
Key kv(std::int64_t pk);
Transaction txn(Tid tid, std::vector<Operation> ops, const Schema& schema);
Operation read(std::int64_t pk);
Operation write(std::int64_t pk, AttrValue v);
Operation add(std::int64_t pk, AttrValue amount);

// Random WAR/WAW and RAW lists pointing at earlier tids.
DependencyDicts random_dicts(Rng& rng, std::size_t n, double war_waw_p, double raw_p);

// Reachability over WAR/WAW edges by depth-first search from i.
std::vector<std::vector<bool>> dfs_reachability(const DependencyDicts& d);

// Edge list of WAR/WAW edges j -> i and reordered RAW edges i -> j, zero-based.
std::vector<std::pair<std::uint32_t, std::uint32_t>> precedence_edges(const DependencyDicts& d);

}  // namespace detdb::testkit
