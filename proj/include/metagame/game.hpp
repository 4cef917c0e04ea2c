#pragma once

// Game definition for building traction-separation digraphs edge by edge.
//
// A game instance fixes a node catalog (one root, one leaf, intermediates)
// and an ordered list of candidate edges; the order is the action index
// order. A state is the on/off status of every candidate edge. The extra
// action index E (= number of candidate edges) ends the game and is only
// legal when the current digraph is admissible.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace metagame {

inline constexpr int kMaxEdges = 128;
inline constexpr int kMaxNodes = 64;

enum class NodeKind { kRoot, kLeaf, kIntermediate };

struct NodeSpec {
  int id = 0;
  std::string name;
  int width = 1;
  NodeKind kind = NodeKind::kIntermediate;
  // Per-component labels; size() == width.
  std::vector<std::string> components;
};

struct Edge {
  int source = 0;
  int target = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Fixed-capacity bit vector over candidate edges.
class EdgeBits {
 public:
  static constexpr int kWords = kMaxEdges / 64;

  EdgeBits() = default;
  static EdgeBits from_u64(std::uint64_t low) {
    EdgeBits b;
    b.words_[0] = low;
    return b;
  }
  static EdgeBits from_indices(const std::vector<int>& indices);

  bool test(int i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(int i) { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
  void reset(int i) { words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }
  int count() const;
  bool none() const;
  std::vector<int> indices() const;

  std::uint64_t word(int w) const { return words_[w]; }
  const std::array<std::uint64_t, kWords>& words() const { return words_; }

  /// Lowercase hex, most significant word first, no leading zeros.
  std::string to_hex() const;
  static EdgeBits from_hex(const std::string& hex);

  friend bool operator==(const EdgeBits&, const EdgeBits&) = default;
  friend auto operator<=>(const EdgeBits&, const EdgeBits&) = default;

 private:
  std::array<std::uint64_t, kWords> words_{};
};

/// Little-endian packing of edge bits; injective for a fixed config.
using StateKey = EdgeBits;

struct StateKeyHash {
  std::size_t operator()(const StateKey& k) const noexcept {
    std::uint64_t h = k.word(0) * 0x9E3779B97F4A7C15ull;
    h ^= k.word(1) + 0x7F4A7C159E3779B9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct GameState {
  EdgeBits edges;
  bool terminated = false;
  friend bool operator==(const GameState&, const GameState&) = default;
};

/// Index into candidate edges, or the TERMINATE action when equal to E.
struct ActionId {
  int index = 0;
  friend bool operator==(const ActionId&, const ActionId&) = default;
};

class GameConfig {
 public:
  GameConfig() = default;

  const std::string& name() const { return name_; }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::vector<int>>& exclusion_groups() const { return exclusion_groups_; }

  int num_edges() const { return static_cast<int>(edges_.size()); }
  ActionId terminate_action() const { return {num_edges()}; }

  int root_id() const { return nodes_[root_pos_].id; }
  int leaf_id() const { return nodes_[leaf_pos_].id; }

  /// Position of a node id within nodes(); throws for unknown ids.
  int position(int node_id) const;
  const NodeSpec& node(int node_id) const { return nodes_[position(node_id)]; }
  std::optional<int> find_node(const std::string& name) const;

  /// Candidate index of the (source, target) pair, or -1.
  int edge_index(int source_id, int target_id) const;
  /// Candidate index of the reversed edge, or -1.
  int reverse_of(int edge) const { return reverse_[edge]; }
  /// Edges that may not be active together with `edge` (exclusion groups).
  const EdgeBits& conflicts_of(int edge) const { return conflicts_[edge]; }

  // Positional endpoints for the bitmask graph routines.
  int source_pos(int edge) const { return edge_src_pos_[edge]; }
  int target_pos(int edge) const { return edge_dst_pos_[edge]; }
  int root_pos() const { return root_pos_; }
  int leaf_pos() const { return leaf_pos_; }

  std::string edge_label(int edge) const;

  nlohmann::json to_json() const;

 private:
  friend GameConfig build_config(const nlohmann::json& doc);

  std::string name_;
  std::vector<NodeSpec> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> exclusion_groups_;

  int root_pos_ = 0;
  int leaf_pos_ = 0;
  std::vector<int> id_to_pos_;  // dense lookup, -1 where absent
  std::vector<int> edge_src_pos_;
  std::vector<int> edge_dst_pos_;
  std::vector<int> reverse_;
  std::vector<EdgeBits> conflicts_;
};

/// Validates a configuration document and builds an immutable config.
GameConfig build_config(const nlohmann::json& doc);
GameConfig load_config(const std::string& path);

/// Per-node successor bitmasks (by node position) of the active subgraph.
std::array<std::uint64_t, kMaxNodes> successor_masks(const GameConfig& config,
                                                     const EdgeBits& edges);

bool creates_cycle(const GameConfig& config, const GameState& state, int edge_index);
bool is_acyclic(const GameConfig& config, const EdgeBits& edges);

/// Acyclic, exclusion-consistent and free of mutually reversed pairs.
bool satisfies_invariants(const GameConfig& config, const EdgeBits& edges);

/// Rules 1-5 plus the requirement of at least one root-to-leaf path.
bool is_admissible(const GameConfig& config, const EdgeBits& edges);
inline bool is_admissible(const GameConfig& config, const GameState& state) {
  return is_admissible(config, state.edges);
}

/// Human-readable reason a digraph is inadmissible; empty when admissible.
std::string admissibility_violation(const GameConfig& config, const EdgeBits& edges);

/// Mask of length E + 1; the last entry is TERMINATE.
std::vector<bool> legal_actions(const GameConfig& config, const GameState& state);

GameState apply_action(const GameConfig& config, const GameState& state, ActionId action);

inline StateKey canonical_key(const GameState& state) { return state.edges; }

struct EnumerationResult {
  std::uint64_t state_count = 0;
  std::uint64_t admissible_count = 0;
  // False when the search stopped at its budget; counts are then lower bounds.
  bool exact = true;
  std::vector<EdgeBits> admissible_sets;
};

struct EnumerationOptions {
  // Maximum number of states to visit; 0 means unbounded (exhaustive).
  std::uint64_t budget = 0;
  bool collect_admissible = false;
};

/// Counts edge subsets satisfying the state invariants and the admissible
/// ones among them. Unbounded enumeration needs at most 25 candidate edges.
EnumerationResult enumerate(const GameConfig& config, const EnumerationOptions& options = {});

}  // namespace metagame
