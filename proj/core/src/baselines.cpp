#include "detdb/baselines.hpp"

#include <algorithm>
#include <deque>

namespace detdb {

std::vector<Tid> aria_validate(const DependencyDicts& dicts, bool reorder) {
  std::vector<Tid> out;
  for (Tid i = 1; i <= dicts.n; ++i) {
    const bool raw = !dicts.raw[i].empty();
    const bool war = !dicts.war[i].empty();
    const bool waw = !dicts.waw[i].empty();
    const bool abort = reorder ? (waw || (raw && war)) : (raw || waw);
    if (abort) out.push_back(i);
  }
  return out;
}

SccReport compute_scc_report(const DependencyDicts& dicts) {
  const Digraph g = precedence_graph(dicts);
  SccReport r;
  std::vector<bool> active(dicts.n + 1, true);
  active[0] = false;
  for (auto& c : strongly_connected_components(g, active)) r.components.push_back({c.begin(), c.end()});
  r.weights.assign(dicts.n + 1, 0);
  for (Tid v = 1; v <= dicts.n; ++v) {
    for (const auto w : g.out(v)) {
      ++r.weights[v];
      ++r.weights[w];
    }
  }
  return r;
}

std::vector<Tid> fga_reorder(const DependencyDicts& dicts) {
  const Digraph g = precedence_graph(dicts);
  std::vector<bool> active(dicts.n + 1, true);
  active[0] = false;
  std::vector<Tid> aborted;
  std::deque<std::vector<std::uint32_t>> work;
  for (auto& c : strongly_connected_components(g, active)) {
    if (c.size() > 1) work.push_back(std::move(c));
  }
  std::vector<bool> member(dicts.n + 1, false);
  std::vector<std::size_t> weight(dicts.n + 1, 0);
  while (!work.empty()) {
    auto comp = std::move(work.front());
    work.pop_front();
    for (const auto v : comp) member[v] = true;
    for (const auto v : comp) {
      for (const auto w : g.out(v)) {
        if (!member[w]) continue;
        ++weight[v];
        ++weight[w];
      }
    }
    std::uint32_t victim = comp.front();
    for (const auto v : comp) {
      if (weight[v] > weight[victim] || (weight[v] == weight[victim] && v > victim)) victim = v;
    }
    std::vector<bool> sub(dicts.n + 1, false);
    for (const auto v : comp) {
      member[v] = false;
      weight[v] = 0;
      sub[v] = v != victim;
    }
    aborted.push_back(victim);
    for (auto& c : strongly_connected_components(g, sub)) {
      if (c.size() > 1) work.push_back(std::move(c));
    }
  }
  std::sort(aborted.begin(), aborted.end());
  return aborted;
}

}  // namespace detdb
