#include "metagame/game.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <set>
#include <sstream>

#include "metagame/error.hpp"

namespace metagame {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig: return "invalid_config";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kIllegalAction: return "illegal_action";
    case ErrorKind::kInadmissible: return "inadmissible";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kUsage: return "usage";
  }
  return "unknown";
}

// ---------------------------------------------------------------- EdgeBits

EdgeBits EdgeBits::from_indices(const std::vector<int>& indices) {
  EdgeBits b;
  for (int i : indices) b.set(i);
  return b;
}

int EdgeBits::count() const {
  int n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

bool EdgeBits::none() const {
  return std::all_of(words_.begin(), words_.end(), [](auto w) { return w == 0; });
}

std::vector<int> EdgeBits::indices() const {
  std::vector<int> out;
  for (int w = 0; w < kWords; ++w) {
    auto bits = words_[w];
    while (bits) {
      out.push_back(w * 64 + std::countr_zero(bits));
      bits &= bits - 1;
    }
  }
  return out;
}

std::string EdgeBits::to_hex() const {
  std::string out;
  static constexpr char kDigits[] = "0123456789abcdef";
  for (int w = kWords - 1; w >= 0; --w) {
    for (int nib = 15; nib >= 0; --nib) {
      int d = static_cast<int>((words_[w] >> (4 * nib)) & 0xF);
      if (out.empty() && d == 0) continue;
      out.push_back(kDigits[d]);
    }
  }
  return out.empty() ? "0" : out;
}

EdgeBits EdgeBits::from_hex(const std::string& hex) {
  if (hex.empty() || hex.size() > static_cast<std::size_t>(kWords) * 16) {
    throw Error(ErrorKind::kInvalidArgument, "bad edge key '" + hex + "'");
  }
  EdgeBits b;
  int nib = 0;
  for (auto it = hex.rbegin(); it != hex.rend(); ++it, ++nib) {
    char c = *it;
    std::uint64_t d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw Error(ErrorKind::kInvalidArgument, "bad edge key '" + hex + "'");
    b.words_[nib / 16] |= d << (4 * (nib % 16));
  }
  return b;
}

// -------------------------------------------------------------- GameConfig

int GameConfig::position(int node_id) const {
  if (node_id < 0 || node_id >= static_cast<int>(id_to_pos_.size()) || id_to_pos_[node_id] < 0) {
    throw Error(ErrorKind::kInvalidArgument, "unknown node id " + std::to_string(node_id));
  }
  return id_to_pos_[node_id];
}

std::optional<int> GameConfig::find_node(const std::string& name) const {
  for (const auto& n : nodes_) {
    if (n.name == name) return n.id;
  }
  return std::nullopt;
}

int GameConfig::edge_index(int source_id, int target_id) const {
  for (int i = 0; i < num_edges(); ++i) {
    if (edges_[i].source == source_id && edges_[i].target == target_id) return i;
  }
  return -1;
}

std::string GameConfig::edge_label(int edge) const {
  return node(edges_[edge].source).name + "->" + node(edges_[edge].target).name;
}

namespace {

std::string_view kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::kRoot: return "root";
    case NodeKind::kLeaf: return "leaf";
    case NodeKind::kIntermediate: return "intermediate";
  }
  return "intermediate";
}

NodeKind parse_kind(const std::string& s) {
  if (s == "root") return NodeKind::kRoot;
  if (s == "leaf") return NodeKind::kLeaf;
  if (s == "intermediate") return NodeKind::kIntermediate;
  throw Error(ErrorKind::kInvalidConfig, "unknown node kind '" + s + "'");
}

[[noreturn]] void config_error(const std::string& msg) {
  throw Error(ErrorKind::kInvalidConfig, msg);
}

}  // namespace

nlohmann::json GameConfig::to_json() const {
  nlohmann::json doc;
  doc["name"] = name_;
  auto& nodes = doc["nodes"] = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({{"id", n.id},
                     {"name", n.name},
                     {"width", n.width},
                     {"kind", kind_name(n.kind)},
                     {"components", n.components}});
  }
  auto& edges = doc["edges"] = nlohmann::json::array();
  for (const auto& e : edges_) edges.push_back({e.source, e.target});
  doc["exclusion_groups"] = exclusion_groups_;
  return doc;
}

GameConfig build_config(const nlohmann::json& doc) {
  GameConfig cfg;
  try {
    cfg.name_ = doc.value("name", std::string("unnamed"));
    if (!doc.contains("nodes") || !doc.at("nodes").is_array()) config_error("missing 'nodes' array");
    if (!doc.contains("edges") || !doc.at("edges").is_array()) config_error("missing 'edges' array");

    int roots = 0, leaves = 0;
    for (const auto& jn : doc.at("nodes")) {
      NodeSpec n;
      n.id = jn.at("id").get<int>();
      n.name = jn.at("name").get<std::string>();
      n.width = jn.value("width", 1);
      n.kind = parse_kind(jn.value("kind", std::string("intermediate")));
      if (n.id < 0 || n.id >= kMaxNodes) config_error("node id out of range: " + std::to_string(n.id));
      if (n.width < 1) config_error("node '" + n.name + "' has width < 1");
      if (jn.contains("components")) {
        n.components = jn.at("components").get<std::vector<std::string>>();
        if (static_cast<int>(n.components.size()) != n.width) {
          config_error("node '" + n.name + "' component labels do not match width");
        }
      } else {
        for (int c = 0; c < n.width; ++c) n.components.push_back(std::to_string(c));
      }
      roots += n.kind == NodeKind::kRoot;
      leaves += n.kind == NodeKind::kLeaf;
      cfg.nodes_.push_back(std::move(n));
    }
    if (roots != 1) config_error("config needs exactly one root node");
    if (leaves != 1) config_error("config needs exactly one leaf node");

    cfg.id_to_pos_.assign(kMaxNodes, -1);
    std::set<std::string> names;
    for (int p = 0; p < static_cast<int>(cfg.nodes_.size()); ++p) {
      const auto& n = cfg.nodes_[p];
      if (cfg.id_to_pos_[n.id] >= 0) config_error("duplicate node id " + std::to_string(n.id));
      if (!names.insert(n.name).second) config_error("duplicate node name '" + n.name + "'");
      cfg.id_to_pos_[n.id] = p;
      if (n.kind == NodeKind::kRoot) cfg.root_pos_ = p;
      if (n.kind == NodeKind::kLeaf) cfg.leaf_pos_ = p;
    }

    auto check_id = [&](int id, const std::string& where) {
      if (id < 0 || id >= kMaxNodes || cfg.id_to_pos_[id] < 0) {
        config_error("unknown node id " + std::to_string(id) + " in " + where);
      }
    };

    for (const auto& je : doc.at("edges")) {
      if (!je.is_array() || je.size() != 2) config_error("edges must be [source, target] pairs");
      Edge e{je[0].get<int>(), je[1].get<int>()};
      check_id(e.source, "edge list");
      check_id(e.target, "edge list");
      const auto& src = cfg.nodes_[cfg.id_to_pos_[e.source]];
      const auto& dst = cfg.nodes_[cfg.id_to_pos_[e.target]];
      if (e.source == e.target) config_error("self-loop on '" + src.name + "'");
      if (dst.kind == NodeKind::kRoot) config_error("edge " + src.name + "->" + dst.name + " targets the root");
      if (src.kind == NodeKind::kLeaf) config_error("edge " + src.name + "->" + dst.name + " leaves the leaf");
      if (std::find(cfg.edges_.begin(), cfg.edges_.end(), e) != cfg.edges_.end()) {
        config_error("duplicate edge " + src.name + "->" + dst.name);
      }
      cfg.edges_.push_back(e);
    }
    if (cfg.edges_.empty()) config_error("config has no candidate edges");
    if (cfg.num_edges() > kMaxEdges) config_error("too many candidate edges");

    if (doc.contains("exclusion_groups")) {
      for (const auto& jg : doc.at("exclusion_groups")) {
        auto group = jg.get<std::vector<int>>();
        for (int id : group) check_id(id, "exclusion group");
        cfg.exclusion_groups_.push_back(std::move(group));
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    config_error(std::string("malformed config document: ") + ex.what());
  }

  const int e_count = cfg.num_edges();
  cfg.edge_src_pos_.resize(e_count);
  cfg.edge_dst_pos_.resize(e_count);
  cfg.reverse_.assign(e_count, -1);
  for (int i = 0; i < e_count; ++i) {
    cfg.edge_src_pos_[i] = cfg.id_to_pos_[cfg.edges_[i].source];
    cfg.edge_dst_pos_[i] = cfg.id_to_pos_[cfg.edges_[i].target];
    cfg.reverse_[i] = cfg.edge_index(cfg.edges_[i].target, cfg.edges_[i].source);
  }

  // An edge touching one member of a group conflicts with every edge that
  // touches a different member of the same group.
  cfg.conflicts_.assign(e_count, EdgeBits{});
  for (const auto& group : cfg.exclusion_groups_) {
    auto touching = [&](int edge, int id) {
      return cfg.edges_[edge].source == id || cfg.edges_[edge].target == id;
    };
    for (int a : group) {
      for (int b : group) {
        if (a == b) continue;
        for (int i = 0; i < e_count; ++i) {
          if (!touching(i, a)) continue;
          for (int j = 0; j < e_count; ++j) {
            if (j != i && touching(j, b)) cfg.conflicts_[i].set(j);
          }
        }
      }
    }
  }
  return cfg;
}

GameConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidConfig, "cannot parse config '" + path + "': " + ex.what());
  }
  return build_config(doc);
}

// ------------------------------------------------------------ graph rules

std::array<std::uint64_t, kMaxNodes> successor_masks(const GameConfig& config,
                                                     const EdgeBits& edges) {
  std::array<std::uint64_t, kMaxNodes> succ{};
  for (int i : edges.indices()) {
    succ[config.source_pos(i)] |= std::uint64_t{1} << config.target_pos(i);
  }
  return succ;
}

namespace {

std::uint64_t reach_from(const std::array<std::uint64_t, kMaxNodes>& adj, int start) {
  std::uint64_t seen = std::uint64_t{1} << start;
  std::uint64_t frontier = seen;
  while (frontier) {
    std::uint64_t next = 0;
    while (frontier) {
      int u = std::countr_zero(frontier);
      frontier &= frontier - 1;
      next |= adj[u];
    }
    frontier = next & ~seen;
    seen |= next;
  }
  return seen;
}

std::array<std::uint64_t, kMaxNodes> transpose(const std::array<std::uint64_t, kMaxNodes>& adj,
                                               int n) {
  std::array<std::uint64_t, kMaxNodes> t{};
  for (int u = 0; u < n; ++u) {
    auto bits = adj[u];
    while (bits) {
      int v = std::countr_zero(bits);
      bits &= bits - 1;
      t[v] |= std::uint64_t{1} << u;
    }
  }
  return t;
}

bool acyclic_masks(const std::array<std::uint64_t, kMaxNodes>& succ, int n) {
  // Kahn's algorithm over bitmasks.
  std::uint64_t remaining = n == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << n) - 1);
  while (remaining) {
    std::uint64_t sources = 0;
    auto bits = remaining;
    while (bits) {
      int u = std::countr_zero(bits);
      bits &= bits - 1;
      bool has_pred = false;
      auto r = remaining;
      while (r) {
        int v = std::countr_zero(r);
        r &= r - 1;
        if ((succ[v] >> u) & 1u) {
          has_pred = true;
          break;
        }
      }
      if (!has_pred) sources |= std::uint64_t{1} << u;
    }
    if (!sources) return false;
    remaining &= ~sources;
  }
  return true;
}

}  // namespace

bool creates_cycle(const GameConfig& config, const GameState& state, int edge_index) {
  auto succ = successor_masks(config, state.edges);
  // Adding s->t closes a cycle iff s is already reachable from t.
  return (reach_from(succ, config.target_pos(edge_index)) >> config.source_pos(edge_index)) & 1u;
}

bool is_acyclic(const GameConfig& config, const EdgeBits& edges) {
  return acyclic_masks(successor_masks(config, edges), static_cast<int>(config.nodes().size()));
}

bool satisfies_invariants(const GameConfig& config, const EdgeBits& edges) {
  for (int i : edges.indices()) {
    if (i >= config.num_edges()) return false;
    int r = config.reverse_of(i);
    if (r >= 0 && edges.test(r)) return false;
    const auto& c = config.conflicts_of(i);
    for (int w = 0; w < EdgeBits::kWords; ++w) {
      if (c.word(w) & edges.word(w)) return false;
    }
  }
  return is_acyclic(config, edges);
}

std::string admissibility_violation(const GameConfig& config, const EdgeBits& edges) {
  const int n = static_cast<int>(config.nodes().size());
  auto succ = successor_masks(config, edges);
  if (!acyclic_masks(succ, n)) return "rule 4: the digraph contains a cycle";
  auto pred = transpose(succ, n);
  std::uint64_t fwd = reach_from(succ, config.root_pos());
  std::uint64_t bwd = reach_from(pred, config.leaf_pos());
  if (!((fwd >> config.leaf_pos()) & 1u)) return "no path leads from the root to the leaf";
  std::uint64_t on_path = fwd & bwd;
  for (int p = 0; p < n; ++p) {
    if (!succ[p] && !pred[p]) continue;  // isolated vertices are allowed (rule 3)
    if (!((on_path >> p) & 1u)) {
      return "rule 5: '" + config.nodes()[p].name + "' is not on a path from root to leaf";
    }
  }
  return {};
}

bool is_admissible(const GameConfig& config, const EdgeBits& edges) {
  return admissibility_violation(config, edges).empty();
}

std::vector<bool> legal_actions(const GameConfig& config, const GameState& state) {
  if (state.terminated) throw Error(ErrorKind::kIllegalAction, "legal_actions on a terminated state");
  const int e = config.num_edges();
  std::vector<bool> mask(e + 1, false);
  auto succ = successor_masks(config, state.edges);
  for (int i = 0; i < e; ++i) {
    if (state.edges.test(i)) continue;
    int r = config.reverse_of(i);
    if (r >= 0 && state.edges.test(r)) continue;
    bool conflict = false;
    const auto& c = config.conflicts_of(i);
    for (int w = 0; w < EdgeBits::kWords && !conflict; ++w) conflict = (c.word(w) & state.edges.word(w)) != 0;
    if (conflict) continue;
    if ((reach_from(succ, config.target_pos(i)) >> config.source_pos(i)) & 1u) continue;
    mask[i] = true;
  }
  mask[e] = is_admissible(config, state.edges);
  return mask;
}

GameState apply_action(const GameConfig& config, const GameState& state, ActionId action) {
  if (state.terminated) throw Error(ErrorKind::kIllegalAction, "game already terminated");
  const int e = config.num_edges();
  if (action.index < 0 || action.index > e) {
    throw Error(ErrorKind::kIllegalAction, "action index out of range: " + std::to_string(action.index));
  }
  auto mask = legal_actions(config, state);
  if (!mask[action.index]) {
    if (action.index == e) {
      throw Error(ErrorKind::kIllegalAction,
                  "cannot terminate: " + admissibility_violation(config, state.edges));
    }
    throw Error(ErrorKind::kIllegalAction, "illegal edge action " + config.edge_label(action.index));
  }
  GameState next = state;
  if (action.index == e) {
    next.terminated = true;
  } else {
    next.edges.set(action.index);
  }
  return next;
}

// ------------------------------------------------------------ enumeration

namespace {

struct Enumerator {
  const GameConfig& config;
  const EnumerationOptions& options;
  EnumerationResult result;
  int n_nodes;
  bool stopped = false;

  // Include-first depth-first search over edge indices; every completed
  // assignment is a distinct edge subset.
  void visit(int i, EdgeBits& edges, std::array<std::uint64_t, kMaxNodes>& succ) {
    if (stopped) return;
    if (i == config.num_edges()) {
      ++result.state_count;
      if (is_admissible(config, edges)) {
        ++result.admissible_count;
        if (options.collect_admissible) result.admissible_sets.push_back(edges);
      }
      if (options.budget && result.state_count >= options.budget) {
        stopped = true;
        result.exact = false;
      }
      return;
    }
    bool can_add = true;
    int r = config.reverse_of(i);
    if (r >= 0 && edges.test(r)) can_add = false;
    if (can_add) {
      const auto& c = config.conflicts_of(i);
      for (int w = 0; w < EdgeBits::kWords && can_add; ++w) can_add = (c.word(w) & edges.word(w)) == 0;
    }
    const int s = config.source_pos(i), t = config.target_pos(i);
    if (can_add && ((reach_from(succ, t) >> s) & 1u)) can_add = false;
    if (can_add) {
      edges.set(i);
      auto saved = succ[s];
      succ[s] |= std::uint64_t{1} << t;
      visit(i + 1, edges, succ);
      succ[s] = saved;
      edges.reset(i);
    }
    visit(i + 1, edges, succ);
  }
};

}  // namespace

EnumerationResult enumerate(const GameConfig& config, const EnumerationOptions& options) {
  if (options.budget == 0 && config.num_edges() > 25) {
    throw Error(ErrorKind::kInvalidArgument,
                "config has " + std::to_string(config.num_edges()) +
                    " candidate edges; exhaustive enumeration needs a budget");
  }
  Enumerator en{config, options, {}, static_cast<int>(config.nodes().size())};
  EdgeBits edges;
  std::array<std::uint64_t, kMaxNodes> succ{};
  en.visit(0, edges, succ);
  return en.result;
}

}  // namespace metagame
