#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <set>

#include "metagame/error.hpp"
#include "metagame/game.hpp"
#include "enumeration_oracle.hpp"
#include "test_support.hpp"

using namespace metagame;
using metagame::testing::brute_force;
using metagame::testing::edge;
using metagame::testing::edges_of;
using metagame::testing::game1;
using metagame::testing::game2;
using metagame::testing::state_of;

namespace {

std::uint64_t count_labeled_dags(int n) {
  // Robinson's recurrence.
  std::vector<std::uint64_t> a(n + 1, 0);
  a[0] = 1;
  auto binom = [](int nn, int k) {
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (nn - k + i) / i;
    return r;
  };
  for (int m = 1; m <= n; ++m) {
    std::int64_t sum = 0;
    for (int k = 1; k <= m; ++k) {
      std::int64_t term = static_cast<std::int64_t>(binom(m, k) * (1ull << (k * (m - k))) * a[m - k]);
      sum += (k % 2 == 1) ? term : -term;
    }
    a[m] = static_cast<std::uint64_t>(sum);
  }
  return a[n];
}

}  // namespace

TEST_CASE("build_config: presets have the published action-space sizes") {
  CHECK(game1().num_edges() == 13);
  CHECK(game2().num_edges() == 71);
  CHECK(game1().nodes().size() == 5);
  // Edge order is the action order of the example game board.
  CHECK(game1().edge_label(0) == "delta_nm->phi");
  CHECK(game1().edge_label(3) == "delta_nm->t_nm");
  CHECK(game1().edge_label(12) == "A_f->t_nm");
  CHECK(game2().edge_index(*game2().find_node("A_f"), *game2().find_node("A_sf")) == -1);
}

TEST_CASE("build_config: rejects malformed documents") {
  auto doc = game1().to_json();

  SUBCASE("leaf as source") {
    doc["edges"].push_back({1, 2});
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("root as target") {
    doc["edges"].push_back({2, 0});
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("duplicate edge") {
    doc["edges"].push_back({0, 2});
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("unknown node in edge") {
    doc["edges"].push_back({0, 17});
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("unknown node in exclusion group") {
    doc["exclusion_groups"] = {{2, 17}};
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("duplicate node id") {
    doc["nodes"].push_back({{"id", 2}, {"name", "other"}, {"width", 1}, {"kind", "intermediate"}});
    CHECK_THROWS_AS(build_config(doc), Error);
  }
  SUBCASE("two roots") {
    doc["nodes"][2]["kind"] = "root";
    CHECK_THROWS_AS(build_config(doc), Error);
  }
}

TEST_CASE("creates_cycle") {
  const auto& g = game1();
  GameState empty;
  for (int i = 0; i < g.num_edges(); ++i) CHECK_FALSE(creates_cycle(g, empty, i));

  auto s = state_of(g, {{"phi", "A_f"}, {"A_f", "CN"}});
  CHECK(creates_cycle(g, s, edge(g, "CN", "phi")));

  auto s2 = state_of(g, {{"phi", "CN"}});
  CHECK_FALSE(creates_cycle(g, s2, edge(g, "phi", "A_f")));
}

TEST_CASE("is_admissible: the four example digraphs") {
  const auto& g = game1();
  auto fig2a = edges_of(g, {{"delta_nm", "phi"}, {"phi", "t_nm"}, {"delta_nm", "CN"}, {"CN", "t_nm"},
                            {"phi", "A_f"}, {"A_f", "CN"}, {"delta_nm", "t_nm"}});
  CHECK(is_admissible(g, fig2a));

  auto fig2b = edges_of(g, {{"delta_nm", "phi"}, {"phi", "A_f"}, {"A_f", "t_nm"}, {"delta_nm", "t_nm"}});
  CHECK(is_admissible(g, fig2b));

  auto fig2c = edges_of(g, {{"delta_nm", "phi"}, {"phi", "A_f"}, {"A_f", "CN"}, {"CN", "phi"},
                            {"CN", "t_nm"}});
  CHECK_FALSE(is_admissible(g, fig2c));
  CHECK(admissibility_violation(g, fig2c).find("rule 4") != std::string::npos);

  auto fig2d = edges_of(g, {{"delta_nm", "t_nm"}, {"phi", "CN"}, {"CN", "A_f"}});
  CHECK_FALSE(is_admissible(g, fig2d));
  CHECK(admissibility_violation(g, fig2d).find("rule 5") != std::string::npos);

  CHECK_FALSE(is_admissible(g, EdgeBits{}));
  CHECK(is_admissible(g, edges_of(g, {{"delta_nm", "t_nm"}})));
}

TEST_CASE("legal_actions") {
  const auto& g = game1();
  auto mask = legal_actions(g, GameState{});
  REQUIRE(mask.size() == 14);
  for (int i = 0; i < 13; ++i) CHECK(mask[i]);
  CHECK_FALSE(mask[13]);

  auto s = state_of(g, {{"phi", "CN"}});
  mask = legal_actions(g, s);
  CHECK_FALSE(mask[edge(g, "CN", "phi")]);
  CHECK_FALSE(mask[edge(g, "phi", "CN")]);
  CHECK(mask[edge(g, "phi", "A_f")]);

  GameState done{EdgeBits{}, true};
  CHECK_THROWS_AS(legal_actions(g, done), Error);
}

TEST_CASE("legal_actions: exclusion group in game 2") {
  const auto& g = game2();
  const int a_f = *g.find_node("A_f");
  const int a_sf = *g.find_node("A_sf");
  for (auto [from, to] : std::vector<std::pair<std::string, std::string>>{
           {"delta_nm", "A_f"}, {"A_f", "t_nm"}, {"phi", "A_f"}, {"A_f", "rho_g"}}) {
    auto mask = legal_actions(g, state_of(g, {{from, to}}));
    int touching_sf = 0;
    for (int i = 0; i < g.num_edges(); ++i) {
      const auto& e = g.edges()[i];
      if (e.source == a_sf || e.target == a_sf) {
        ++touching_sf;
        CHECK_FALSE(mask[i]);
      }
    }
    CHECK(touching_sf == 14);
    (void)a_f;
  }
}

TEST_CASE("apply_action: the five-move example game") {
  const auto& g = game1();
  std::vector<int> moves{edge(g, "delta_nm", "CN"), edge(g, "CN", "A_f"), edge(g, "A_f", "t_nm"),
                         edge(g, "CN", "phi"), edge(g, "phi", "t_nm")};
  CHECK(moves == std::vector<int>{1, 8, 12, 7, 6});
  GameState s;
  for (int m : moves) s = apply_action(g, s, {m});
  CHECK(s.edges == metagame::testing::fig4_digraph(g));
  CHECK(is_admissible(g, s));

  auto before = s;
  auto done = apply_action(g, s, g.terminate_action());
  CHECK(done.terminated);
  CHECK(done.edges == s.edges);
  CHECK(s == before);

  CHECK_THROWS_AS(apply_action(g, s, {1}), Error);
  CHECK_THROWS_AS(apply_action(g, GameState{}, g.terminate_action()), Error);
  CHECK_THROWS_AS(apply_action(g, done, {0}), Error);
  CHECK(apply_action(g, s, {3}) == apply_action(g, s, {3}));
}

TEST_CASE("canonical_key: little-endian bit packing") {
  CHECK(canonical_key(GameState{}) == StateKey::from_u64(0));
  CHECK(canonical_key(GameState{EdgeBits::from_indices({0}), false}) == StateKey::from_u64(1));
  CHECK(canonical_key(GameState{EdgeBits::from_indices({0, 3}), true}) == StateKey::from_u64(9));
  auto high = EdgeBits::from_indices({0, 70});
  CHECK(EdgeBits::from_hex(high.to_hex()) == high);
  CHECK(high.to_hex() == "400000000000000001");
}

TEST_CASE("enumerate: game 1 matches the brute-force oracle and the closed form") {
  auto oracle = brute_force(game1());
  CHECK(oracle.states == 3200);
  CHECK(oracle.admissible == 591);
  // Seven root/leaf edges are free; the three intermediates form any labeled DAG.
  CHECK((1u << 7) * count_labeled_dags(3) == 3200);

  auto res = enumerate(game1(), {.budget = 0, .collect_admissible = true});
  CHECK(res.exact);
  CHECK(res.state_count == 3200);
  CHECK(res.admissible_count == 591);
  std::set<EdgeBits> unique(res.admissible_sets.begin(), res.admissible_sets.end());
  CHECK(unique.size() == 591);
}

TEST_CASE("enumerate: tiny config agrees with the oracle") {
  auto tiny = load_config(metagame::testing::preset_path("tiny"));
  auto oracle = brute_force(tiny);
  auto res = enumerate(tiny);
  CHECK(res.state_count == static_cast<std::uint64_t>(oracle.states));
  CHECK(res.admissible_count == static_cast<std::uint64_t>(oracle.admissible));
  CHECK(res.state_count == 8);
  // {d->t}, {d->q, q->t}, {d->q, q->t, d->t}
  CHECK(res.admissible_count == 3);
}

TEST_CASE("enumerate: large configs need a budget") {
  CHECK_THROWS_AS(enumerate(game2()), Error);
  auto res = enumerate(game2(), {.budget = 5000});
  CHECK_FALSE(res.exact);
  CHECK(res.state_count == 5000);
}

TEST_CASE("property: no dead ends from any valid game-1 state") {
  auto res = enumerate(game1());
  int checked = 0;
  for (std::uint32_t m = 0; m < (1u << 13); ++m) {
    auto bits = EdgeBits::from_u64(m);
    if (!satisfies_invariants(game1(), bits)) continue;
    auto mask = legal_actions(game1(), GameState{bits, false});
    CHECK(std::find(mask.begin(), mask.end(), true) != mask.end());
    ++checked;
  }
  CHECK(checked == static_cast<int>(res.state_count));
}

TEST_CASE("property: random legal playouts keep the state invariants") {
  std::mt19937_64 rng(12345);
  for (const GameConfig* g : {&game1(), &game2()}) {
    const int episodes = g == &game1() ? 10000 : 2000;
    for (int ep = 0; ep < episodes; ++ep) {
      GameState s;
      while (!s.terminated) {
        auto mask = legal_actions(*g, s);
        std::vector<int> legal;
        for (int i = 0; i < static_cast<int>(mask.size()); ++i)
          if (mask[i]) legal.push_back(i);
        REQUIRE_FALSE(legal.empty());
        if (ep % 50 == 0) {
          // Every legal action yields a valid state.
          for (int a : legal) {
            auto next = apply_action(*g, s, {a});
            REQUIRE(satisfies_invariants(*g, next.edges));
          }
        }
        // Bias towards edges so games grow beyond trivially small graphs.
        std::uniform_int_distribution<int> pick(0, static_cast<int>(legal.size()) - 1);
        int a = legal[pick(rng)];
        if (a == g->num_edges() && legal.size() > 1 && (rng() % 4) != 0) a = legal[0];
        s = apply_action(*g, s, {a});
        REQUIRE(satisfies_invariants(*g, s.edges));
      }
      REQUIRE(is_admissible(*g, s));
    }
  }
}
