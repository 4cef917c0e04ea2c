#pragma once

// Randomized checks shared by the unit tests and the acceptance suite.

#include <map>
#include <random>
#include <sstream>
#include <string>

#include "metagame/drl.hpp"
#include "metagame/model.hpp"
#include "test_support.hpp"

namespace metagame::testing {

inline std::vector<bool> random_mask(int actions, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.6);
  std::vector<bool> legal(actions);
  for (int a = 0; a < actions; ++a) legal[a] = coin(rng);
  legal[std::uniform_int_distribution<int>(0, actions - 1)(rng)] = true;
  return legal;
}

/// Random state, mask, normalized pi over the mask and z in {-1, +1}.
inline ReplaySample random_sample(int edges, std::mt19937_64& rng) {
  ReplaySample s;
  std::bernoulli_distribution coin(0.5);
  for (int e = 0; e < edges; ++e)
    if (coin(rng)) s.state.set(e);
  auto legal = random_mask(edges + 1, rng);
  s.legal.assign(legal.begin(), legal.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  s.pi.assign(edges + 1, 0.0);
  double total = 0.0;
  for (int a = 0; a <= edges; ++a)
    if (legal[a]) total += (s.pi[a] = u(rng));
  for (double& p : s.pi) p /= total;
  s.z = coin(rng) ? 1.0 : -1.0;
  return s;
}

/// Worst relative error of the window-MLP loss gradient over random instances.
inline double mlp_gradient_worst(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> width(1, 6);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int instance = 0; instance < instances; ++instance) {
    RegressorHyper h;
    h.family = RegressorFamily::kMlpWindow;
    h.hidden = {width(rng), width(rng)};
    int in = width(rng), out = width(rng), n = 7;
    Regressor r(h, in, out);
    Vector p(r.parameters().size());
    for (int i = 0; i < p.size(); ++i) p[i] = 0.7 * g(rng);
    r.set_parameters(p);
    Matrix x(n, in), y(n, out);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    for (int i = 0; i < y.size(); ++i) y.data()[i] = g(rng);

    Vector analytic;
    r.loss_and_gradient(x, y, &analytic);
    Vector numeric(p.size());
    for (int i = 0; i < p.size(); ++i) {
      Vector q = p;
      q[i] = p[i] + 1e-5;
      r.set_parameters(q);
      double up = r.loss_and_gradient(x, y, nullptr);
      q[i] = p[i] - 1e-5;
      r.set_parameters(q);
      double down = r.loss_and_gradient(x, y, nullptr);
      numeric[i] = (up - down) / 2e-5;
    }
    worst = std::max(worst, max_rel_error(analytic, numeric));
  }
  return worst;
}

/// Worst relative error of the policy/value loss gradient over random instances.
inline double policy_value_gradient_worst(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> width(1, 6);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int instance = 0; instance < instances; ++instance) {
    int edges = width(rng) + 1;
    PolicyValueNet net(edges, {width(rng), width(rng)}, instance);
    Vector& p = net.params();
    for (int i = 0; i < p.size(); ++i) p[i] = 0.7 * g(rng);
    const Vector base = p;
    std::vector<ReplaySample> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(random_sample(edges, rng));
    std::vector<const ReplaySample*> batch;
    for (const auto& s : samples) batch.push_back(&s);

    Vector analytic;
    net.loss_and_gradient(batch, &analytic);
    Vector numeric(base.size());
    for (int i = 0; i < base.size(); ++i) {
      p = base;
      p[i] += 1e-5;
      double up = net.loss_and_gradient(batch, nullptr).total;
      p[i] = base[i] - 1e-5;
      double down = net.loss_and_gradient(batch, nullptr).total;
      numeric[i] = (up - down) / 2e-5;
    }
    p = base;
    worst = std::max(worst, max_rel_error(analytic, numeric));
  }
  return worst;
}

// Deterministic stand-in for the model score: a fixed pseudo-random value
// per digraph.
inline double hashed_score(const EdgeBits& bits) {
  std::uint64_t h = StateKeyHash{}(bits);
  return static_cast<double>(h % 1000) / 1000.0;
}

struct FuzzResult {
  long searches = 0;
  long node_snapshots = 0;
  long violations = 0;
  std::string first_violation;
};

/// Plays `episodes` games with random nets and search settings, checking the
/// tree statistics after every search. Visits through a node are counted
/// independently from the parents' edge counts.
inline FuzzResult mcts_fuzz(const GameConfig& cfg, int episodes, std::uint64_t seed) {
  FuzzResult out;
  auto fail = [&](const std::string& what) {
    if (out.violations++ == 0) out.first_violation = what;
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sims(1, 40);
  std::uniform_real_distribution<double> cpuct(0.1, 3.0);
  for (int episode = 0; episode < episodes; ++episode) {
    PolicyValueNet net(cfg.num_edges(), {8}, seed + episode);
    SearchOptions opt;
    opt.simulations = sims(rng);
    opt.c_puct = cpuct(rng);
    if (episode % 4 == 3) opt.dirichlet_fraction = 0.25;
    SearchTree tree;
    std::map<StateKey, int> roots;
    GameState state;
    const StateKey initial = state.edges;
    RewardBaseline baseline;
    auto terminal = [&](const EdgeBits& bits) { return baseline.reward(hashed_score(bits)); };
    while (!state.terminated) {
      auto visits = mcts_search(cfg, state, net, terminal, opt, tree, &rng);
      roots[state.edges] += 1;
      ++out.searches;

      std::map<StateKey, double> inflow;
      for (const auto& [key, node] : tree.nodes) {
        double total = 0.0;
        for (std::size_t i = 0; i < node.actions.size(); ++i) {
          total += node.n[i];
          if (node.n[i] == 0.0 && (node.w[i] != 0.0 || node.q[i] != 0.0)) fail("unvisited edge with W or Q set");
          if (node.n[i] > 0.0 && std::abs(node.q[i] * node.n[i] - node.w[i]) > 1e-12) fail("Q*N != W");
          GameState child = apply_action(cfg, GameState{key, false}, ActionId{node.actions[i]});
          if (!child.terminated) inflow[child.edges] += node.n[i];
        }
        if (total != static_cast<double>(node.simulations)) fail("sum N != simulations recorded at node");
        ++out.node_snapshots;
      }
      // Arrivals from parents, minus the simulation that expanded the node,
      // plus the searches rooted at it.
      for (const auto& [key, node] : tree.nodes) {
        double expected = inflow[key] - (key == initial ? 0.0 : 1.0) +
                          static_cast<double>(roots.count(key) ? roots[key] : 0) * opt.simulations;
        if (static_cast<double>(node.simulations) != expected) fail("simulations through node disagree with flow");
      }

      auto pi = search_policy(visits, 1.0);
      auto legal = legal_actions(cfg, state);
      double sum = 0.0;
      for (double p : pi) sum += p;
      if (std::abs(sum - 1.0) > 1e-12) fail("pi does not sum to one");
      for (std::size_t a = 0; a < pi.size(); ++a)
        if (!legal[a] && pi[a] != 0.0) fail("pi on an illegal action");
      int action = std::discrete_distribution<int>(pi.begin(), pi.end())(rng);
      state = apply_action(cfg, state, ActionId{action});
    }
    baseline.add(hashed_score(state.edges));
  }
  return out;
}

}  // namespace metagame::testing
