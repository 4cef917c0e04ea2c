#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "metagame/game.hpp"

namespace metagame::testing {

// Independent brute-force oracle: plain adjacency lists, recursive DFS.
struct OracleCounts {
  int states = 0;
  int admissible = 0;
};

inline OracleCounts brute_force(const GameConfig& cfg) {
  const int n_nodes = static_cast<int>(cfg.nodes().size());
  const int e = cfg.num_edges();
  OracleCounts out;
  for (std::uint32_t mask = 0; mask < (1u << e); ++mask) {
    std::vector<std::vector<int>> adj(n_nodes), radj(n_nodes);
    std::vector<bool> touched(n_nodes, false);
    bool reversed_pair = false, excluded = false;
    for (int i = 0; i < e; ++i) {
      if (!((mask >> i) & 1u)) continue;
      int s = cfg.position(cfg.edges()[i].source), t = cfg.position(cfg.edges()[i].target);
      adj[s].push_back(t);
      radj[t].push_back(s);
      touched[s] = touched[t] = true;
      for (int j = 0; j < e; ++j) {
        if (j != i && ((mask >> j) & 1u) && cfg.edges()[j].source == cfg.edges()[i].target &&
            cfg.edges()[j].target == cfg.edges()[i].source) {
          reversed_pair = true;
        }
      }
    }
    for (const auto& group : cfg.exclusion_groups()) {
      int members_touched = 0;
      for (int id : group) members_touched += touched[cfg.position(id)];
      if (members_touched > 1) excluded = true;
    }
    // Cycle detection with colours.
    std::vector<int> colour(n_nodes, 0);
    bool cyclic = false;
    std::function<void(int)> dfs = [&](int u) {
      colour[u] = 1;
      for (int v : adj[u]) {
        if (colour[v] == 1) cyclic = true;
        else if (colour[v] == 0) dfs(v);
      }
      colour[u] = 2;
    };
    for (int u = 0; u < n_nodes; ++u)
      if (!colour[u]) dfs(u);
    if (cyclic || reversed_pair || excluded) continue;
    ++out.states;

    auto reach = [&](int start, const std::vector<std::vector<int>>& g) {
      std::vector<bool> seen(n_nodes, false);
      std::vector<int> stack{start};
      seen[start] = true;
      while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v : g[u])
          if (!seen[v]) {
            seen[v] = true;
            stack.push_back(v);
          }
      }
      return seen;
    };
    auto fwd = reach(cfg.root_pos(), adj);
    auto bwd = reach(cfg.leaf_pos(), radj);
    if (!fwd[cfg.leaf_pos()]) continue;
    bool ok = true;
    for (int u = 0; u < n_nodes; ++u) {
      if (touched[u] && !(fwd[u] && bwd[u])) ok = false;
    }
    out.admissible += ok;
  }
  return out;
}

}  // namespace metagame::testing
