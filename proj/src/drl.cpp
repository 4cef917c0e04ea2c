#include "metagame/drl.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "metagame/error.hpp"
#include "metagame/random.hpp"

namespace metagame {

// ------------------------------------------------------------------- net

PolicyValueNet::PolicyValueNet(int num_edges, std::vector<int> trunk, std::uint64_t seed, bool zero_heads)
    : num_edges_(num_edges), trunk_(std::move(trunk)) {
  if (num_edges < 1) throw Error(ErrorKind::kInvalidArgument, "net needs at least one edge");
  std::vector<int> sizes{num_edges};
  sizes.insert(sizes.end(), trunk_.begin(), trunk_.end());
  sizes.push_back(num_edges + 2);
  mlp_ = Mlp(sizes);
  mlp_.init(seed, zero_heads);
}

namespace {

struct Head {
  std::vector<double> policy;
  std::vector<double> log_policy;
  double value;
};

Head heads(const Eigen::Ref<const Eigen::RowVectorXd>& out, const std::vector<bool>& legal) {
  const int actions = static_cast<int>(out.size()) - 1;
  Head h;
  h.policy.assign(actions, 0.0);
  h.log_policy.assign(actions, -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < actions; ++a)
    if (legal[a]) top = std::max(top, out[a]);
  if (!std::isfinite(top)) throw Error(ErrorKind::kIllegalAction, "no legal action in mask");
  double sum = 0.0;
  for (int a = 0; a < actions; ++a)
    if (legal[a]) sum += std::exp(out[a] - top);
  const double log_sum = std::log(sum);
  for (int a = 0; a < actions; ++a) {
    if (!legal[a]) continue;
    h.log_policy[a] = out[a] - top - log_sum;
    h.policy[a] = std::exp(h.log_policy[a]);
  }
  h.value = std::tanh(out[actions]);
  return h;
}

}  // namespace

PolicyValueNet::Output PolicyValueNet::forward(const EdgeBits& state, const std::vector<bool>& legal) const {
  if (static_cast<int>(legal.size()) != num_actions()) throw Error(ErrorKind::kDimension, "legal mask has wrong length");
  Matrix x(1, num_edges_);
  for (int e = 0; e < num_edges_; ++e) x(0, e) = state.test(e) ? 1.0 : 0.0;
  Matrix out = mlp_.forward(x);
  Head h = heads(out.row(0), legal);
  return {std::move(h.policy), h.value};
}

Matrix PolicyValueNet::encode(const std::vector<const ReplaySample*>& batch) const {
  Matrix x(static_cast<int>(batch.size()), num_edges_);
  for (int i = 0; i < static_cast<int>(batch.size()); ++i)
    for (int e = 0; e < num_edges_; ++e) x(i, e) = batch[i]->state.test(e) ? 1.0 : 0.0;
  return x;
}

PolicyValueNet::Loss PolicyValueNet::loss_and_gradient(const std::vector<const ReplaySample*>& batch,
                                                       Vector* grad) const {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty training batch");
  const int b = static_cast<int>(batch.size());
  Mlp::Tape tape;
  Matrix out = mlp_.forward(encode(batch), grad ? &tape : nullptr);
  Matrix d_out = Matrix::Zero(b, out.cols());
  Loss loss;
  for (int i = 0; i < b; ++i) {
    const auto& s = *batch[i];
    if (static_cast<int>(s.pi.size()) != num_actions() || static_cast<int>(s.legal.size()) != num_actions()) {
      throw Error(ErrorKind::kDimension, "replay sample has the wrong action count");
    }
    std::vector<bool> legal(s.legal.begin(), s.legal.end());
    Head h = heads(out.row(i), legal);
    double pi_sum = 0.0, ce = 0.0;
    for (int a = 0; a < num_actions(); ++a) {
      if (!legal[a] || s.pi[a] == 0.0) continue;
      pi_sum += s.pi[a];
      ce -= s.pi[a] * h.log_policy[a];
    }
    const double diff = h.value - s.z;
    loss.value += diff * diff;
    loss.policy += ce;
    for (int a = 0; a < num_actions(); ++a) {
      if (legal[a]) d_out(i, a) = (h.policy[a] * pi_sum - s.pi[a]) / b;
    }
    d_out(i, num_actions()) = 2.0 * diff * (1.0 - h.value * h.value) / b;
  }
  loss.value /= b;
  loss.policy /= b;
  loss.total = loss.value + loss.policy;
  if (grad) {
    *grad = Vector::Zero(mlp_.num_params());
    mlp_.backward(tape, d_out, *grad);
  }
  return loss;
}

std::vector<double> train_net(PolicyValueNet& net, const std::vector<ReplaySample>& replay, const TrainHyper& hyper,
                              std::uint64_t seed) {
  if (replay.empty()) throw Error(ErrorKind::kInvalidArgument, "replay buffer is empty");
  if (hyper.epochs < 1 || hyper.batch < 1 || !(hyper.learning_rate > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "training hyperparameters out of range");
  }
  Adam adam;
  adam.learning_rate = hyper.learning_rate;
  std::mt19937_64 rng(seed);
  std::vector<int> order(replay.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> trace;
  Vector grad;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      std::vector<const ReplaySample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&replay[order[i]]);
      auto loss = net.loss_and_gradient(batch, &grad);
      sum += loss.total * static_cast<double>(batch.size());
      adam.step(net.params(), grad);
    }
    trace.push_back(sum / static_cast<double>(order.size()));
    if (!std::isfinite(trace.back())) throw Error(ErrorKind::kNumeric, "policy/value training diverged");
  }
  return trace;
}

// ------------------------------------------------------------------ MCTS

int select_action(const TreeNode& node, double c_puct) {
  if (node.actions.empty()) throw Error(ErrorKind::kIllegalAction, "node has no legal actions");
  double total = 0.0;
  for (double v : node.n) total += v;
  const double root_total = std::sqrt(total);
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(node.actions.size()); ++i) {
    double score = node.q[i] + c_puct * node.prior[i] * root_total / (1.0 + node.n[i]);
    if (score > best_score || (score == best_score && node.prior[i] > node.prior[best])) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

std::vector<double> mcts_search(const GameConfig& config, const GameState& root, const PolicyValueNet& net,
                                const TerminalValue& terminal, const SearchOptions& options, SearchTree& tree,
                                std::mt19937_64* noise_rng) {
  if (root.terminated) throw Error(ErrorKind::kInvalidArgument, "search from a terminated state");
  if (options.simulations < 1) throw Error(ErrorKind::kInvalidConfig, "simulations must be >= 1");

  auto expand = [&](const GameState& s) -> double {
    auto legal = legal_actions(config, s);
    auto out = net.forward(s.edges, legal);
    TreeNode node;
    for (int a = 0; a < static_cast<int>(legal.size()); ++a) {
      if (!legal[a]) continue;
      node.actions.push_back(a);
      node.prior.push_back(out.policy[a]);
    }
    node.n.assign(node.actions.size(), 0.0);
    node.w.assign(node.actions.size(), 0.0);
    node.q.assign(node.actions.size(), 0.0);
    tree.nodes.emplace(canonical_key(s), std::move(node));
    return out.value;
  };

  if (!tree.nodes.count(canonical_key(root))) expand(root);
  TreeNode& root_node = tree.nodes.at(canonical_key(root));
  if (options.dirichlet_fraction > 0.0 && noise_rng) {
    std::gamma_distribution<double> gamma(options.dirichlet_alpha, 1.0);
    std::vector<double> noise(root_node.actions.size());
    double sum = 0.0;
    for (auto& v : noise) sum += (v = gamma(*noise_rng));
    for (std::size_t i = 0; i < noise.size(); ++i) {
      root_node.prior[i] = (1.0 - options.dirichlet_fraction) * root_node.prior[i] +
                           options.dirichlet_fraction * (sum > 0.0 ? noise[i] / sum : 1.0 / noise.size());
    }
  }

  std::vector<std::pair<TreeNode*, int>> path;
  for (int sim = 0; sim < options.simulations; ++sim) {
    path.clear();
    GameState s = root;
    double value = 0.0;
    while (true) {
      TreeNode& node = tree.nodes.at(canonical_key(s));
      int i = select_action(node, options.c_puct);
      path.emplace_back(&node, i);
      s = apply_action(config, s, ActionId{node.actions[i]});
      if (s.terminated) {
        value = terminal(s.edges);
        break;
      }
      if (!tree.nodes.count(canonical_key(s))) {
        value = expand(s);
        break;
      }
    }
    for (auto [node, i] : path) {
      node->simulations += 1;
      node->n[i] += 1.0;
      node->w[i] += value;
      node->q[i] = node->w[i] / node->n[i];
    }
  }

  std::vector<double> visits(net.num_actions(), 0.0);
  for (std::size_t i = 0; i < root_node.actions.size(); ++i) visits[root_node.actions[i]] = root_node.n[i];
  return visits;
}

std::vector<double> search_policy(const std::vector<double>& visits, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::kInvalidArgument, "temperature must be positive");
  double top = -std::numeric_limits<double>::infinity();
  for (double n : visits) {
    if (n < 0.0) throw Error(ErrorKind::kInvalidArgument, "negative visit count");
    if (n > 0.0) top = std::max(top, std::log(n) / tau);
  }
  if (!std::isfinite(top)) throw Error(ErrorKind::kInvalidArgument, "all visit counts are zero");
  std::vector<double> pi(visits.size(), 0.0);
  double sum = 0.0;
  for (std::size_t a = 0; a < visits.size(); ++a) {
    if (visits[a] > 0.0) sum += (pi[a] = std::exp(std::log(visits[a]) / tau - top));
  }
  for (double& p : pi) p /= sum;
  return pi;
}

double RewardBaseline::mean() const {
  if (scores_.empty()) return 0.0;
  std::size_t from = (window_ > 0 && scores_.size() > static_cast<std::size_t>(window_)) ? scores_.size() - window_ : 0;
  double sum = 0.0;
  for (std::size_t i = from; i < scores_.size(); ++i) sum += scores_[i];
  return sum / static_cast<double>(scores_.size() - from);
}

// -------------------------------------------------------------- episodes

Episode self_play_episode(const GameConfig& config, const PolicyValueNet& net, const ScoreFn& score,
                          const RewardBaseline& baseline, const SearchOptions& search, double tau,
                          std::uint64_t seed) {
  if (net.num_edges() != config.num_edges()) throw Error(ErrorKind::kDimension, "net does not match the game");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SearchTree tree;
  TerminalValue terminal = [&](const EdgeBits& bits) { return baseline.reward(score(bits)); };

  Episode ep;
  GameState state;
  while (!state.terminated) {
    auto visits = mcts_search(config, state, net, terminal, search, tree, &rng);
    auto pi = search_policy(visits, tau);
    auto legal = legal_actions(config, state);
    ReplaySample sample;
    sample.state = state.edges;
    sample.pi = pi;
    sample.legal.assign(legal.begin(), legal.end());
    ep.samples.push_back(std::move(sample));

    double u = unit(rng), acc = 0.0;
    int action = -1;
    for (int a = 0; a < static_cast<int>(pi.size()); ++a) {
      if (pi[a] <= 0.0) continue;
      action = a;
      acc += pi[a];
      if (u < acc) break;
    }
    state = apply_action(config, state, ActionId{action});
  }
  ep.digraph = state.edges;
  ep.score = score(state.edges);
  ep.z = baseline.reward(ep.score);
  for (auto& s : ep.samples) s.z = ep.z;
  return ep;
}

// -------------------------------------------------------------- schedule

void DrlSchedule::validate() const {
  if (explore_iterations < 0 || games_per_iteration < 1 || search.simulations < 1) {
    throw Error(ErrorKind::kInvalidConfig, "schedule counts must be positive");
  }
  if (!(tau_explore > 0.0) || !(tau_compete > 0.0)) throw Error(ErrorKind::kInvalidConfig, "temperatures must be positive");
  if (!(search.c_puct >= 0.0)) throw Error(ErrorKind::kInvalidConfig, "c_puct must be non-negative");
  if (search.dirichlet_fraction < 0.0 || search.dirichlet_fraction > 1.0 || !(search.dirichlet_alpha > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "bad Dirichlet noise settings");
  }
  if (train.epochs < 1 || train.batch < 1 || !(train.learning_rate > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "training hyperparameters out of range");
  }
  for (int n : trunk)
    if (n < 1) throw Error(ErrorKind::kInvalidConfig, "trunk layer sizes must be positive");
  if (baseline_window < 0) throw Error(ErrorKind::kInvalidConfig, "baseline window must be >= 0");
}

nlohmann::json DrlSchedule::to_json() const {
  return {{"explore_iterations", explore_iterations},
          {"games_per_iteration", games_per_iteration},
          {"simulations", search.simulations},
          {"c_puct", search.c_puct},
          {"dirichlet_alpha", search.dirichlet_alpha},
          {"dirichlet_fraction", search.dirichlet_fraction},
          {"tau_explore", tau_explore},
          {"tau_compete", tau_compete},
          {"trunk", trunk},
          {"train_epochs", train.epochs},
          {"train_batch", train.batch},
          {"learning_rate", train.learning_rate},
          {"baseline_window", baseline_window},
          {"seed", seed}};
}

DrlSchedule DrlSchedule::from_json(const nlohmann::json& j) {
  DrlSchedule s;
  try {
    s.explore_iterations = j.value("explore_iterations", s.explore_iterations);
    s.games_per_iteration = j.value("games_per_iteration", s.games_per_iteration);
    s.search.simulations = j.value("simulations", s.search.simulations);
    s.search.c_puct = j.value("c_puct", s.search.c_puct);
    s.search.dirichlet_alpha = j.value("dirichlet_alpha", s.search.dirichlet_alpha);
    s.search.dirichlet_fraction = j.value("dirichlet_fraction", s.search.dirichlet_fraction);
    s.tau_explore = j.value("tau_explore", s.tau_explore);
    s.tau_compete = j.value("tau_compete", s.tau_compete);
    s.trunk = j.value("trunk", s.trunk);
    s.train.epochs = j.value("train_epochs", s.train.epochs);
    s.train.batch = j.value("train_batch", s.train.batch);
    s.train.learning_rate = j.value("learning_rate", s.train.learning_rate);
    s.baseline_window = j.value("baseline_window", s.baseline_window);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidConfig, std::string("bad schedule document: ") + ex.what());
  }
  s.validate();
  return s;
}

// --------------------------------------------------------------- reports

void summarize(IterationRecord& r) {
  if (r.scores.empty()) return;
  std::vector<double> v = r.scores;
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double sq = 0.0;
  for (double x : v) sq += (x - r.mean) * (x - r.mean);
  r.stddev = std::sqrt(sq / n);
  auto quantile = [&](double q) {
    double pos = q * (n - 1.0);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  r.q1 = quantile(0.25);
  r.median = quantile(0.5);
  r.q3 = quantile(0.75);
  r.min = v.front();
  r.max = v.back();
}

nlohmann::json IterationRecord::to_json() const {
  return {{"iteration", iteration}, {"tau", tau},       {"scores", scores}, {"digraphs", digraphs},
          {"mean", mean},           {"std", stddev},    {"q1", q1},         {"median", median},
          {"q3", q3},               {"min", min},       {"max", max},       {"replay_size", replay_size},
          {"losses", losses}};
}

IterationRecord IterationRecord::from_json(const nlohmann::json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.tau = j.at("tau").get<double>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.digraphs = j.at("digraphs").get<std::vector<std::string>>();
  r.mean = j.at("mean").get<double>();
  r.stddev = j.at("std").get<double>();
  r.q1 = j.at("q1").get<double>();
  r.median = j.at("median").get<double>();
  r.q3 = j.at("q3").get<double>();
  r.min = j.at("min").get<double>();
  r.max = j.at("max").get<double>();
  r.replay_size = j.at("replay_size").get<std::size_t>();
  r.losses = j.at("losses").get<std::vector<double>>();
  return r;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& r : iterations) its.push_back(r.to_json());
  return {{"format", "metagame-run"},
          {"config", config},
          {"seed", seed},
          {"dataset_fingerprint", dataset_fingerprint},
          {"schedule", schedule},
          {"iterations", its},
          {"best", {{"digraph", best_digraph}, {"edges", best_edges}, {"score", best_score}}}};
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    if (j.value("format", std::string()) != "metagame-run") throw Error(ErrorKind::kSchema, "not a run report");
    r.config = j.at("config").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    r.schedule = j.at("schedule");
    for (const auto& it : j.at("iterations")) r.iterations.push_back(IterationRecord::from_json(it));
    r.best_digraph = j.at("best").at("digraph").get<std::string>();
    r.best_edges = j.at("best").at("edges").get<std::vector<std::string>>();
    r.best_score = j.at("best").at("score").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kSchema, std::string("bad run report: ") + ex.what());
  }
  return r;
}

void write_iterations_csv(std::ostream& out, const RunReport& report) {
  out << "iteration,game,score\n";
  char buf[64];
  for (const auto& it : report.iterations) {
    for (std::size_t g = 0; g < it.scores.size(); ++g) {
      std::snprintf(buf, sizeof buf, "%d,%zu,%.17g\n", it.iteration, g, it.scores[g]);
      out << buf;
    }
  }
}

// ---------------------------------------------------------------- driver

namespace {

namespace fs = std::filesystem;

constexpr int kCheckpointVersion = 1;

nlohmann::json replay_to_json(const std::vector<ReplaySample>& replay) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : replay) {
    std::string legal(s.legal.size(), '0');
    for (std::size_t i = 0; i < s.legal.size(); ++i) legal[i] = s.legal[i] ? '1' : '0';
    arr.push_back({{"state", s.state.to_hex()}, {"pi", s.pi}, {"legal", legal}, {"z", s.z}});
  }
  return arr;
}

std::vector<ReplaySample> replay_from_json(const nlohmann::json& arr) {
  std::vector<ReplaySample> out;
  for (const auto& j : arr) {
    ReplaySample s;
    s.state = EdgeBits::from_hex(j.at("state").get<std::string>());
    s.pi = j.at("pi").get<std::vector<double>>();
    for (char c : j.at("legal").get<std::string>()) s.legal.push_back(c == '1');
    s.z = j.at("z").get<double>();
    out.push_back(std::move(s));
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

RunReport run_drl(const GameConfig& config, const Dataset& dataset, const ScoreSpec& spec,
                  const RegressorHyper& hyper, const DrlSchedule& schedule, ScoreCache& cache,
                  const RunOptions& options, PolicyValueNet* final_net) {
  schedule.validate();
  spec.validate();
  if (options.threads < 1) throw Error(ErrorKind::kInvalidArgument, "threads must be >= 1");
  const std::uint64_t fingerprint = dataset.fingerprint();
  ScoreFn score = [&](const EdgeBits& bits) {
    return evaluate_digraph(config, bits, dataset, fingerprint, spec, hyper, &cache).score;
  };

  const std::uint64_t seed = schedule.seed;
  PolicyValueNet net(config.num_edges(), schedule.trunk, derive_seed(seed, {0x6e6574ull}));
  std::vector<ReplaySample> replay;
  RewardBaseline baseline(schedule.baseline_window);
  RunReport report;
  report.config = config.name();
  report.seed = seed;
  report.dataset_fingerprint = hex64(fingerprint);
  report.schedule = schedule.to_json();
  report.best_score = -1.0;
  int start = 0;

  const fs::path checkpoint = options.checkpoint_dir.empty() ? fs::path() : fs::path(options.checkpoint_dir) / "checkpoint.json";
  if (options.resume && !checkpoint.empty() && fs::exists(checkpoint)) {
    std::ifstream in(checkpoint);
    nlohmann::json j;
    try {
      in >> j;
      if (j.at("version").get<int>() > kCheckpointVersion) throw Error(ErrorKind::kVersion, "checkpoint version is newer than supported");
      RunReport saved = RunReport::from_json(j.at("report"));
      if (saved.schedule != report.schedule || saved.config != report.config ||
          saved.dataset_fingerprint != report.dataset_fingerprint) {
        throw Error(ErrorKind::kInvalidArgument, "checkpoint belongs to a different run (schedule, config or dataset)");
      }
      report = saved;
      auto params = j.at("net").get<std::vector<double>>();
      if (static_cast<long>(params.size()) != net.params().size()) throw Error(ErrorKind::kSchema, "checkpoint net size mismatch");
      net.params() = Eigen::Map<Vector>(params.data(), static_cast<long>(params.size()));
      replay = replay_from_json(j.at("replay"));
      for (double s : j.at("baseline").get<std::vector<double>>()) baseline.add(s);
      start = j.at("next_iteration").get<int>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::kIo, std::string("corrupt checkpoint: ") + ex.what());
    }
  }

  const int total = schedule.explore_iterations + 1;
  for (int it = start; it < total; ++it) {
    const bool explore = it < schedule.explore_iterations;
    IterationRecord record;
    record.iteration = it;
    record.tau = explore ? schedule.tau_explore : schedule.tau_compete;

    for (int g = 0; g < schedule.games_per_iteration; g += options.threads) {
      const int batch = std::min(options.threads, schedule.games_per_iteration - g);
      const RewardBaseline snapshot = baseline;
      std::vector<Episode> episodes(batch);
      auto play = [&](int i) {
        episodes[i] = self_play_episode(config, net, score, snapshot, schedule.search, record.tau,
                                        derive_seed(seed, {static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(g + i)}));
      };
      if (batch == 1) {
        play(0);
      } else {
        std::vector<std::exception_ptr> errors(batch);
        std::vector<std::thread> workers;
        for (int i = 0; i < batch; ++i) {
          workers.emplace_back([&, i] {
            try {
              play(i);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }
      for (auto& ep : episodes) {
        baseline.add(ep.score);
        record.scores.push_back(ep.score);
        record.digraphs.push_back(ep.digraph.to_hex());
        if (ep.score > report.best_score) {
          report.best_score = ep.score;
          report.best_digraph = ep.digraph.to_hex();
          report.best_edges.clear();
          for (int e : ep.digraph.indices()) report.best_edges.push_back(config.edge_label(e));
        }
        replay.insert(replay.end(), ep.samples.begin(), ep.samples.end());
      }
    }

    if (explore) {
      record.losses = train_net(net, replay, schedule.train,
                                derive_seed(seed, {static_cast<std::uint64_t>(it), 0x747261696eull}));
    }
    record.replay_size = replay.size();
    summarize(record);
    report.iterations.push_back(record);

    if (!checkpoint.empty()) {
      std::error_code ec;
      fs::create_directories(checkpoint.parent_path(), ec);
      nlohmann::json j{{"version", kCheckpointVersion},
                       {"next_iteration", it + 1},
                       {"report", report.to_json()},
                       {"net", std::vector<double>(net.params().data(), net.params().data() + net.params().size())},
                       {"replay", replay_to_json(replay)},
                       {"baseline", baseline.scores()}};
      auto tmp = checkpoint;
      tmp += ".tmp";
      {
        std::ofstream out(tmp);
        if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint in '" + options.checkpoint_dir + "'");
        out << j.dump();
      }
      fs::rename(tmp, checkpoint, ec);
      if (ec) throw Error(ErrorKind::kIo, "cannot write checkpoint in '" + options.checkpoint_dir + "'");
    }
    if (options.on_iteration) options.on_iteration(report);
  }
  if (final_net) *final_net = net;
  return report;
}

}  // namespace metagame
