#pragma once

#include <cstdint>
#include <vector>

#include "detdb/mtfs.hpp"

namespace detdb {

// reorder=false aborts any RAW or WAW; reorder=true aborts any WAW plus
// RAW together with WAR. Ascending tids.
std::vector<Tid> aria_validate(const DependencyDicts& dicts, bool reorder);

struct SccReport {
  std::vector<std::vector<Tid>> components;  // partition of tids 1..n
  std::vector<std::size_t> weights;          // indexed by tid: in + out degree
};

SccReport compute_scc_report(const DependencyDicts& dicts);

// Repeatedly aborts the heaviest member (in + out degree within the
// component, ties to the higher tid) of every multi-node SCC.
std::vector<Tid> fga_reorder(const DependencyDicts& dicts);

}  // namespace detdb
