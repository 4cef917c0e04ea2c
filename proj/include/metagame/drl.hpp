#pragma once

// AlphaZero-style self-play: policy/value net, PUCT tree search, episodes
// rewarded against a running-mean baseline, and the iteration driver.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "metagame/dataset.hpp"
#include "metagame/game.hpp"
#include "metagame/mlp.hpp"
#include "metagame/model.hpp"
#include "metagame/scoring.hpp"

namespace metagame {

struct ReplaySample {
  EdgeBits state;
  std::vector<double> pi;     // length E + 1
  std::vector<uint8_t> legal;  // length E + 1
  double z = 0.0;
  friend bool operator==(const ReplaySample&, const ReplaySample&) = default;
};

class PolicyValueNet {
 public:
  PolicyValueNet() = default;
  PolicyValueNet(int num_edges, std::vector<int> trunk, std::uint64_t seed, bool zero_heads = false);

  int num_edges() const { return num_edges_; }
  int num_actions() const { return num_edges_ + 1; }
  const std::vector<int>& trunk() const { return trunk_; }
  Vector& params() { return mlp_.params(); }
  const Vector& params() const { return mlp_.params(); }

  struct Output {
    std::vector<double> policy;  // zero on illegal actions
    double value = 0.0;          // in (-1, 1)
  };

  Output forward(const EdgeBits& state, const std::vector<bool>& legal) const;

  struct Loss {
    double total = 0.0;
    double value = 0.0;
    double policy = 0.0;
  };

  /// Mean over the batch of (v - z)^2 - sum_legal pi log p.
  Loss loss_and_gradient(const std::vector<const ReplaySample*>& batch, Vector* grad) const;

  friend bool operator==(const PolicyValueNet&, const PolicyValueNet&) = default;

 private:
  Matrix encode(const std::vector<const ReplaySample*>& batch) const;

  int num_edges_ = 0;
  std::vector<int> trunk_;
  Mlp mlp_;
};

struct TrainHyper {
  int epochs = 10;
  int batch = 64;
  double learning_rate = 1e-3;
  friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

/// Adam over seeded minibatches; returns the mean loss of each epoch.
std::vector<double> train_net(PolicyValueNet& net, const std::vector<ReplaySample>& replay,
                              const TrainHyper& hyper, std::uint64_t seed);

struct TreeNode {
  std::vector<int> actions;  // legal actions
  std::vector<double> prior, n, w, q;
  long simulations = 0;  // simulations that selected an action here
};

struct SearchTree {
  std::unordered_map<StateKey, TreeNode, StateKeyHash> nodes;
};

struct SearchOptions {
  int simulations = 20;
  double c_puct = 1.0;
  double dirichlet_alpha = 0.3;
  double dirichlet_fraction = 0.0;  // 0 disables root noise
  friend bool operator==(const SearchOptions&, const SearchOptions&) = default;
};

/// Returns +-1 for a terminated digraph.
using TerminalValue = std::function<double(const EdgeBits&)>;

/// Runs the simulations from `root` and returns N(root, a) over all E + 1 actions.
std::vector<double> mcts_search(const GameConfig& config, const GameState& root, const PolicyValueNet& net,
                                const TerminalValue& terminal, const SearchOptions& options, SearchTree& tree,
                                std::mt19937_64* noise_rng = nullptr);

/// PUCT argmax at a node; ties go to the highest prior, then the lowest index.
int select_action(const TreeNode& node, double c_puct);

/// pi_a proportional to N_a^(1 / tau).
std::vector<double> search_policy(const std::vector<double>& visits, double tau);

class RewardBaseline {
 public:
  explicit RewardBaseline(int window = 0) : window_(window) {}
  double mean() const;
  void add(double score) { scores_.push_back(score); }
  const std::vector<double>& scores() const { return scores_; }
  int window() const { return window_; }
  /// +1 when score beats the mean strictly, else -1.
  double reward(double score) const { return score > mean() ? 1.0 : -1.0; }

 private:
  int window_;
  std::vector<double> scores_;
};

using ScoreFn = std::function<double(const EdgeBits&)>;

struct Episode {
  std::vector<ReplaySample> samples;
  EdgeBits digraph;
  double score = 0.0;
  double z = 0.0;
};

Episode self_play_episode(const GameConfig& config, const PolicyValueNet& net, const ScoreFn& score,
                          const RewardBaseline& baseline, const SearchOptions& search, double tau,
                          std::uint64_t seed);

struct DrlSchedule {
  int explore_iterations = 10;
  int games_per_iteration = 20;
  SearchOptions search;
  double tau_explore = 1.0;
  double tau_compete = 0.01;
  std::vector<int> trunk{64, 64};
  TrainHyper train;
  int baseline_window = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DrlSchedule from_json(const nlohmann::json& j);
  friend bool operator==(const DrlSchedule&, const DrlSchedule&) = default;
};

struct IterationRecord {
  int iteration = 0;
  double tau = 1.0;
  std::vector<double> scores;
  std::vector<std::string> digraphs;  // hex keys
  double mean = 0.0, stddev = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
  std::size_t replay_size = 0;
  std::vector<double> losses;

  nlohmann::json to_json() const;
  static IterationRecord from_json(const nlohmann::json& j);
  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

/// Population statistics; quartiles by linear interpolation.
void summarize(IterationRecord& record);

struct RunReport {
  std::string config;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  nlohmann::json schedule;
  std::vector<IterationRecord> iterations;
  std::string best_digraph;
  std::vector<std::string> best_edges;
  double best_score = 0.0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Columns: iteration, game, score.
void write_iterations_csv(std::ostream& out, const RunReport& report);

struct RunOptions {
  int threads = 1;
  // Per-iteration checkpoint (report, net, replay, baseline); empty disables.
  std::string checkpoint_dir;
  bool resume = false;
  // Called after each iteration with the report so far.
  std::function<void(const RunReport&)> on_iteration;
};

RunReport run_drl(const GameConfig& config, const Dataset& dataset, const ScoreSpec& spec,
                  const RegressorHyper& hyper, const DrlSchedule& schedule, ScoreCache& cache,
                  const RunOptions& options = {}, PolicyValueNet* final_net = nullptr);

}  // namespace metagame
