#pragma once

#include <cstdint>
#include <vector>

namespace detdb {

// Directed graph over dense node ids [0, n).
class Digraph {
 public:
  explicit Digraph(std::size_t n = 0) : adj_(n) {}

  std::size_t size() const { return adj_.size(); }
  void add_edge(std::uint32_t from, std::uint32_t to) { adj_[from].push_back(to); }
  // Sorts and dedups adjacency lists.
  void finalize();
  const std::vector<std::uint32_t>& out(std::uint32_t v) const { return adj_[v]; }
  std::size_t edge_count() const;

 private:
  std::vector<std::vector<std::uint32_t>> adj_;
};

// Tarjan, iterative. Nodes with active[v] == false are ignored (an empty
// mask means all nodes). Each component is sorted ascending; components
// are ordered by their smallest node.
std::vector<std::vector<std::uint32_t>> strongly_connected_components(
    const Digraph& g, const std::vector<bool>& active = {});

bool is_acyclic(const Digraph& g, const std::vector<bool>& active = {});

}  // namespace detdb
