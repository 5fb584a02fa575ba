#include "detdb/graph.hpp"

#include <algorithm>
#include <limits>

namespace detdb {

void Digraph::finalize() {
  for (auto& a : adj_) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
}

std::size_t Digraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& a : adj_) n += a.size();
  return n;
}

std::vector<std::vector<std::uint32_t>> strongly_connected_components(
    const Digraph& g, const std::vector<bool>& active) {
  constexpr std::uint32_t kUnvisited = std::numeric_limits<std::uint32_t>::max();
  const auto n = static_cast<std::uint32_t>(g.size());
  auto on = [&](std::uint32_t v) { return active.empty() || active[v]; };

  std::vector<std::uint32_t> index(n, kUnvisited), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::uint32_t> stack;
  std::vector<std::pair<std::uint32_t, std::size_t>> frames;
  std::vector<std::vector<std::uint32_t>> comps;
  std::uint32_t counter = 0;

  for (std::uint32_t root = 0; root < n; ++root) {
    if (!on(root) || index[root] != kUnvisited) continue;
    frames.emplace_back(root, 0);
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!frames.empty()) {
      auto& [v, pos] = frames.back();
      const auto& out = g.out(v);
      if (pos < out.size()) {
        const std::uint32_t w = out[pos++];
        if (!on(w)) continue;
        if (index[w] == kUnvisited) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          frames.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      const std::uint32_t done = v;
      frames.pop_back();
      if (!frames.empty()) {
        const std::uint32_t parent = frames.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
      if (low[done] == index[done]) {
        std::vector<std::uint32_t> comp;
        std::uint32_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp.push_back(w);
        } while (w != done);
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
      }
    }
  }
  std::sort(comps.begin(), comps.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return comps;
}

bool is_acyclic(const Digraph& g, const std::vector<bool>& active) {
  for (const auto& c : strongly_connected_components(g, active)) {
    if (c.size() > 1) return false;
  }
  for (std::uint32_t v = 0; v < g.size(); ++v) {
    if (!active.empty() && !active[v]) continue;
    const auto& out = g.out(v);
    if (std::find(out.begin(), out.end(), v) != out.end()) return false;
  }
  return true;
}

}  // namespace detdb
