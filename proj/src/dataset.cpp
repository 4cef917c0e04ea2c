#include "metagame/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "metagame/error.hpp"
#include "metagame/random.hpp"

namespace metagame {

namespace fs = std::filesystem;

Schema default_schema() {
  return {
      {"delta_nm", {"n", "m"}, false}, {"t_nm", {"n", "m"}, false},
      {"phi", {"0"}, false},           {"CN", {"0"}, false},
      {"A_f", {"11", "22", "33"}, true}, {"A_sf", {"11", "22", "33"}, true},
      {"d_a", {"0"}, false},           {"c_t", {"0"}, false},
      {"l_sp", {"0"}, false},          {"rho_g", {"0"}, false},
  };
}

int LoadingPath::steps() const {
  return quantities.empty() ? 0 : static_cast<int>(quantities.begin()->second.rows());
}

const Series& LoadingPath::at(const std::string& name) const {
  auto it = quantities.find(name);
  if (it == quantities.end()) {
    throw Error(ErrorKind::kSchema, "path " + std::to_string(id) + " has no quantity '" + name + "'");
  }
  return it->second;
}

const LoadingPath& Dataset::path(int id) const {
  for (const auto& p : paths)
    if (p.id == id) return p;
  throw Error(ErrorKind::kInvalidArgument, "no path with id " + std::to_string(id));
}

std::vector<const LoadingPath*> Dataset::split(Split which) const {
  const auto& ids = which == Split::kTrain ? train_ids : test_ids;
  std::vector<const LoadingPath*> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(&path(id));
  return out;
}

const QuantitySpec* Dataset::find(const std::string& name) const {
  for (const auto& q : schema)
    if (q.name == name) return &q;
  return nullptr;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  void text(const std::string& s) {
    bytes(s.data(), s.size());
    value(s.size());
  }
};

}  // namespace

std::uint64_t Dataset::fingerprint() const {
  Fnv1a f;
  for (const auto& q : schema) {
    f.text(q.name);
    for (const auto& c : q.components) f.text(c);
  }
  for (int id : train_ids) f.value(id);
  f.value(-1);
  for (int id : test_ids) f.value(id);
  for (const auto& p : paths) {
    f.value(p.id);
    for (const auto& [name, series] : p.quantities) {
      f.text(name);
      f.bytes(series.data(), sizeof(double) * series.size());
    }
  }
  return f.h;
}

// ------------------------------------------------------------- generation

std::vector<SeparationHistory> generate_paths(const LoadingProtocol& protocol, int n_paths,
                                              std::uint64_t seed) {
  if (n_paths < 1) throw Error(ErrorKind::kInvalidArgument, "n_paths must be >= 1");
  if (protocol.steps < 2) throw Error(ErrorKind::kInvalidArgument, "protocol needs at least 2 steps");
  if (protocol.min_segments < 1 || protocol.max_segments < protocol.min_segments ||
      protocol.max_segments > protocol.steps - 1) {
    throw Error(ErrorKind::kInvalidArgument, "degenerate protocol: bad segment counts");
  }
  if (!(protocol.max_rate > 0.0)) throw Error(ErrorKind::kInvalidArgument, "protocol max_rate must be > 0");

  std::vector<SeparationHistory> out;
  out.reserve(n_paths);
  const double pi = std::acos(-1.0);
  for (int p = 0; p < n_paths; ++p) {
    SeparationHistory h;
    h.meta.seed = derive_seed(seed, {static_cast<std::uint64_t>(p)});
    std::mt19937_64 rng(h.meta.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int moving_steps = protocol.steps - 1;
    if (protocol.mode == LoadingProtocol::Mode::kMonotoneNormal) {
      double rate = protocol.max_rate * (0.5 + 0.5 * unit(rng));
      h.meta.segments.push_back({moving_steps, rate, 0.0});
      h.meta.rate_ratio = std::numeric_limits<double>::infinity();
    } else {
      // Base loading direction: mostly tension/shear, sometimes compressive.
      double theta = -0.25 * pi + 0.75 * pi * unit(rng);
      double speed = protocol.max_rate * (0.5 + 0.5 * unit(rng));
      double base_n = speed * std::cos(theta), base_m = speed * std::sin(theta);
      h.meta.rate_ratio = base_m != 0.0 ? base_n / base_m : std::numeric_limits<double>::infinity();

      std::uniform_int_distribution<int> seg_count(protocol.min_segments, protocol.max_segments);
      int n_seg = seg_count(rng);
      // Random composition of the moving steps into n_seg positive parts.
      std::vector<int> cuts;
      std::vector<int> pool(moving_steps - 1);
      std::iota(pool.begin(), pool.end(), 1);
      std::shuffle(pool.begin(), pool.end(), rng);
      cuts.assign(pool.begin(), pool.begin() + (n_seg - 1));
      std::sort(cuts.begin(), cuts.end());
      cuts.insert(cuts.begin(), 0);
      cuts.push_back(moving_steps);
      for (int s = 0; s < n_seg; ++s) {
        // Loading segments alternate with unloading/reloading reversals.
        double sign = (s % 2 == 1 && unit(rng) < 0.75) ? -1.0 : 1.0;
        double factor = 0.5 + unit(rng);
        double tilt = 0.3 * (unit(rng) - 0.5);
        double rn = base_n * std::cos(tilt) - base_m * std::sin(tilt);
        double rm = base_n * std::sin(tilt) + base_m * std::cos(tilt);
        h.meta.segments.push_back({cuts[s + 1] - cuts[s], sign * factor * rn, sign * factor * rm});
      }
    }

    h.delta = Series::Zero(protocol.steps, 2);
    int t = 1;
    for (const auto& seg : h.meta.segments) {
      for (int k = 0; k < seg.steps; ++k, ++t) {
        h.delta(t, 0) = h.delta(t - 1, 0) + seg.rate_n;
        h.delta(t, 1) = std::max(0.0, h.delta(t - 1, 1) + seg.rate_m);
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

// -------------------------------------------------------------- truths

namespace {

constexpr double kThird = 1.0 / 3.0;

std::vector<double> kernel(int memory, double rho, double power) {
  std::vector<double> w(memory);
  double sum = 0.0;
  for (int k = 0; k < memory; ++k) {
    w[k] = std::pow(k + 1.0, power) * std::pow(rho, k);
    sum += w[k];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// sum_k w_k x(t - k, col), with pre-history rows equal to `rest`.
double convolve(const Series& x, int col, int t, const std::vector<double>& w, double rest) {
  double acc = 0.0;
  for (int k = 0; k < static_cast<int>(w.size()); ++k) {
    acc += w[k] * (t - k >= 0 ? x(t - k, col) : rest);
  }
  return acc;
}

std::vector<double> rest_or(const TruthModel& truth, const std::string& name,
                            std::vector<double> fallback) {
  auto it = truth.rest.find(name);
  return it == truth.rest.end() ? fallback : it->second;
}

void derived_quantities(LoadingPath& path) {
  const int steps = path.steps();
  const Series& cn = path.quantities.at("CN");
  const Series& phi = path.quantities.at("phi");
  const Series& af = path.quantities.at("A_f");
  Series asf(steps, 3), da(steps, 1), ct(steps, 1), lsp(steps, 1), rho(steps, 1);
  for (int t = 0; t < steps; ++t) {
    for (int c = 0; c < 3; ++c) asf(t, c) = kThird + 1.6 * (af(t, c) - kThird);
    da(t, 0) = -0.15 + 0.03 * (cn(t, 0) - 6.0);
    ct(t, 0) = 0.25 - 0.8 * (phi(t, 0) - 0.4);
    lsp(t, 0) = 3.5 - 0.15 * (cn(t, 0) - 6.0);
    rho(t, 0) = 0.002 * cn(t, 0);
  }
  path.quantities["A_sf"] = std::move(asf);
  path.quantities["d_a"] = std::move(da);
  path.quantities["c_t"] = std::move(ct);
  path.quantities["l_sp"] = std::move(lsp);
  path.quantities["rho_g"] = std::move(rho);
}

void simulate_linear(const TruthModel& truth, const Series& delta, LoadingPath& path) {
  const int steps = static_cast<int>(delta.rows());
  const int m = truth.memory;
  const auto rest_d = rest_or(truth, "delta_nm", {0.0, 0.0});
  const auto rest_cn = rest_or(truth, "CN", {6.0});
  const auto rest_phi = rest_or(truth, "phi", {0.4});
  const auto rest_af = rest_or(truth, "A_f", {kThird, kThird, kThird});

  static const auto k_cn_n = kernel(20, 0.85, 1.0);
  static const auto k_cn_m = kernel(20, 0.80, 2.0);
  static const auto k_phi = kernel(20, 0.90, 2.0);
  static const auto k_u = kernel(20, 0.75, 3.0);
  static const auto k_v = kernel(20, 0.88, 1.0);
  static const auto k_tn_phi = kernel(20, 0.80, 1.0);
  static const auto k_tn_a = kernel(20, 0.85, 2.0);
  static const auto k_tm_a = kernel(20, 0.90, 1.0);
  static const auto k_tm_phi = kernel(20, 0.70, 3.0);
  auto trunc = [m](const std::vector<double>& w) {
    return std::vector<double>(w.begin(), w.begin() + std::min<int>(m, static_cast<int>(w.size())));
  };

  Series cn(steps, 1), phi(steps, 1), af(steps, 3), tr(steps, 2);
  for (int t = 0; t < steps; ++t) {
    cn(t, 0) = 6.0 + 20.0 * convolve(delta, 0, t, trunc(k_cn_n), rest_d[0]) -
               12.0 * convolve(delta, 1, t, trunc(k_cn_m), rest_d[1]);
  }
  for (int t = 0; t < steps; ++t) {
    phi(t, 0) = 0.40 - 0.01 * (convolve(cn, 0, t, trunc(k_phi), rest_cn[0]) - 6.0);
    double u = 0.02 * (convolve(cn, 0, t, trunc(k_u), rest_cn[0]) - 6.0);
    double v = -0.015 * (convolve(cn, 0, t, trunc(k_v), rest_cn[0]) - 6.0);
    af(t, 0) = kThird + u;
    af(t, 1) = kThird + v;
    af(t, 2) = 1.0 - af(t, 0) - af(t, 1);
  }
  for (int t = 0; t < steps; ++t) {
    // A_11 - A_33 and A_22 enter through their own memory kernels.
    double a13 = 0.0, a22 = 0.0;
    const auto w13 = trunc(k_tn_a), w22 = trunc(k_tm_a);
    for (int k = 0; k < static_cast<int>(w13.size()); ++k) {
      double d = t - k >= 0 ? af(t - k, 0) - af(t - k, 2) : rest_af[0] - rest_af[2];
      a13 += w13[k] * d;
    }
    for (int k = 0; k < static_cast<int>(w22.size()); ++k) {
      a22 += w22[k] * (t - k >= 0 ? af(t - k, 1) : rest_af[1]);
    }
    tr(t, 0) = -5.0 - 300.0 * (convolve(phi, 0, t, trunc(k_tn_phi), rest_phi[0]) - 0.4) + 200.0 * a13;
    tr(t, 1) = 2.0 + 150.0 * (a22 - kThird) - 100.0 * (convolve(phi, 0, t, trunc(k_tm_phi), rest_phi[0]) - 0.4);
  }
  path.quantities["CN"] = std::move(cn);
  path.quantities["phi"] = std::move(phi);
  path.quantities["A_f"] = std::move(af);
  path.quantities["t_nm"] = std::move(tr);
}

void simulate_damage(const Series& delta, LoadingPath& path) {
  const int steps = static_cast<int>(delta.rows());
  Series cn(steps, 1), phi(steps, 1), af(steps, 3), tr(steps, 2);
  auto cn_eq = [](double p) { return 3.0 + 5.0 * std::exp(-(p - 0.30) / 0.06); };
  double p = 0.40, c = cn_eq(0.40), damage = 0.0;
  double a[3] = {kThird, kThird, kThird};
  for (int t = 0; t < steps; ++t) {
    double dn = t > 0 ? delta(t, 0) - delta(t - 1, 0) : 0.0;
    double dm = t > 0 ? delta(t, 1) - delta(t - 1, 1) : 0.0;
    // Dilation under opening and shearing, compaction under closing.
    p = std::clamp(p + 0.08 * dn + 0.05 * std::abs(dm), 0.30, 0.55);
    c += 0.2 * (cn_eq(p) - c);
    if (std::abs(dn) + std::abs(dm) > 0.0) {
      double theta = std::atan2(dm, dn);
      double target[3] = {kThird + 0.12 * std::cos(2 * theta),
                          kThird - 0.06 * std::cos(2 * theta) + 0.08 * std::sin(2 * theta), 0.0};
      target[2] = 1.0 - target[0] - target[1];
      for (int k = 0; k < 3; ++k) a[k] += 0.15 * (target[k] - a[k]);
    }
    double trace = a[0] + a[1] + a[2];
    for (double& v : a) v /= trace;

    double dn_open = std::max(delta(t, 0), 0.0);
    double eff = std::sqrt(dn_open * dn_open + delta(t, 1) * delta(t, 1));
    damage = std::max(damage, 1.0 - std::exp(-std::max(eff - 0.02, 0.0) / 0.05));
    double kn = 400.0 * (c / 6.0) * (1.0 + 0.5 * (a[0] - kThird));
    double km = 150.0 * (c / 6.0) * (1.0 + 0.5 * (a[1] - kThird));
    double tn = delta(t, 0) >= 0.0 ? (1.0 - damage) * kn * delta(t, 0) : kn * delta(t, 0);
    double tm = std::min((1.0 - damage) * km * delta(t, 1), 0.5 * std::max(-tn, 0.0) + (1.0 - damage) * 2.0);

    phi(t, 0) = p;
    cn(t, 0) = c;
    for (int k = 0; k < 3; ++k) af(t, k) = a[k];
    tr(t, 0) = tn;
    tr(t, 1) = tm;
  }
  path.quantities["CN"] = std::move(cn);
  path.quantities["phi"] = std::move(phi);
  path.quantities["A_f"] = std::move(af);
  path.quantities["t_nm"] = std::move(tr);
}

double noise_scale(const std::string& name) {
  static const std::map<std::string, double> scales{
      {"t_nm", 1.0}, {"phi", 0.01}, {"CN", 0.1},    {"A_f", 0.01},  {"A_sf", 0.01},
      {"d_a", 0.01}, {"c_t", 0.01}, {"l_sp", 0.05}, {"rho_g", 1e-4}};
  auto it = scales.find(name);
  return it == scales.end() ? 0.0 : it->second;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TruthModel::hidden_edges() const {
  if (kind == TruthKind::kLinearMemory) {
    return {{"delta_nm", "CN"}, {"CN", "phi"}, {"CN", "A_f"}, {"phi", "t_nm"}, {"A_f", "t_nm"}};
  }
  return {{"delta_nm", "phi"}, {"phi", "CN"}, {"delta_nm", "A_f"},
          {"CN", "t_nm"},      {"A_f", "t_nm"}, {"delta_nm", "t_nm"}};
}

std::vector<std::string> TruthModel::rest_order() const {
  if (kind == TruthKind::kLinearMemory) return {"delta_nm", "CN", "phi", "A_f"};
  return {};
}

nlohmann::json TruthModel::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == TruthKind::kLinearMemory ? "linear-memory" : "damage-friction";
  j["noise"] = noise;
  j["seed"] = seed;
  j["memory"] = memory;
  j["rest"] = rest;
  j["hidden_edges"] = hidden_edges();
  return j;
}

TruthModel default_truth() { return TruthModel{}; }

LoadingPath simulate_truth(const TruthModel& truth, const SeparationHistory& separations, int id) {
  if (separations.delta.cols() != 2 || separations.delta.rows() < 2) {
    throw Error(ErrorKind::kDimension, "separation history must be T x 2 with T >= 2");
  }
  if (truth.memory < 1 || truth.memory > 20) {
    throw Error(ErrorKind::kInvalidArgument, "truth memory must be in [1, 20]");
  }
  LoadingPath path;
  path.id = id;
  path.meta = separations.meta;
  path.quantities["delta_nm"] = separations.delta;
  if (truth.kind == TruthKind::kLinearMemory) {
    simulate_linear(truth, separations.delta, path);
  } else {
    simulate_damage(separations.delta, path);
  }
  derived_quantities(path);

  if (truth.noise > 0.0) {
    std::mt19937_64 rng(derive_seed(truth.seed, {separations.meta.seed, 0x6e6f697365ull}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& [name, series] : path.quantities) {
      double scale = truth.noise * noise_scale(name);
      if (scale == 0.0) continue;
      for (int t = 0; t < series.rows(); ++t) {
        double mean_noise = 0.0;
        for (int c = 0; c < series.cols(); ++c) {
          double e = scale * gauss(rng);
          series(t, c) += e;
          mean_noise += e;
        }
        // Keep fabric tensors on the unit-trace manifold.
        if (name == "A_f" || name == "A_sf") {
          mean_noise /= static_cast<double>(series.cols());
          for (int c = 0; c < series.cols(); ++c) series(t, c) -= mean_noise;
        }
      }
    }
  }

  for (const auto& [name, series] : path.quantities) {
    if (!series.allFinite()) {
      throw Error(ErrorKind::kNumeric, "truth produced a non-finite value for '" + name + "'");
    }
  }
  return path;
}

TruthModel calibrated_truth(TruthModel truth, const std::vector<SeparationHistory>& train) {
  if (train.empty()) throw Error(ErrorKind::kInvalidArgument, "calibration needs training paths");
  for (const auto& name : truth.rest_order()) {
    std::vector<double> sum;
    long rows = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto path = simulate_truth(truth, train[i], static_cast<int>(i));
      const Series& s = path.at(name);
      if (sum.empty()) sum.assign(s.cols(), 0.0);
      for (int c = 0; c < s.cols(); ++c) sum[c] += s.col(c).sum();
      rows += s.rows();
    }
    for (auto& v : sum) v /= static_cast<double>(rows);
    truth.rest[name] = sum;
  }
  return truth;
}

EdgeBits hidden_digraph(const GameConfig& config, const TruthModel& truth) {
  EdgeBits bits;
  for (const auto& [from, to] : truth.hidden_edges()) {
    auto s = config.find_node(from), t = config.find_node(to);
    int e = (s && t) ? config.edge_index(*s, *t) : -1;
    if (e < 0) {
      throw Error(ErrorKind::kInvalidConfig,
                  "config '" + config.name() + "' lacks hidden edge " + from + "->" + to);
    }
    bits.set(e);
  }
  return bits;
}

Dataset make_dataset(const GameConfig& config, TruthModel truth, int n_train, int n_test,
                     std::uint64_t seed, const LoadingProtocol& protocol) {
  if (n_train < 1 || n_test < 1) {
    throw Error(ErrorKind::kInvalidArgument, "n_train and n_test must be >= 1");
  }
  const int total = n_train + n_test;
  auto histories = generate_paths(protocol, total, derive_seed(seed, {1}));

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(derive_seed(seed, {2}));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  Dataset ds;
  ds.schema = default_schema();
  ds.train_ids.assign(order.begin(), order.begin() + n_train);
  ds.test_ids.assign(order.begin() + n_train, order.end());

  std::vector<SeparationHistory> train;
  for (int id : ds.train_ids) train.push_back(histories[id]);
  truth = calibrated_truth(std::move(truth), train);

  ds.paths.reserve(total);
  for (int id = 0; id < total; ++id) ds.paths.push_back(simulate_truth(truth, histories[id], id));

  auto violations = validate_dataset(config, ds);
  if (!violations.empty()) {
    throw Error(ErrorKind::kSchema, "generated dataset is invalid: " + violations.front());
  }
  return ds;
}

Dataset make_default_dataset(const GameConfig& config, TruthModel* truth_out) {
  auto truth = default_truth();
  auto ds = make_dataset(config, truth, 50, 150, kDefaultDatasetSeed);
  if (truth_out) {
    std::vector<SeparationHistory> train;
    auto histories = generate_paths({}, 200, derive_seed(kDefaultDatasetSeed, {1}));
    for (int id : ds.train_ids) train.push_back(histories[id]);
    *truth_out = calibrated_truth(truth, train);
  }
  return ds;
}

// -------------------------------------------------------------- validation

std::vector<std::string> validate_dataset(const GameConfig& config, const Dataset& dataset) {
  std::vector<std::string> out;
  for (const auto& node : config.nodes()) {
    const auto* q = dataset.find(node.name);
    if (!q) {
      out.push_back("schema lacks quantity '" + node.name + "' required by config '" + config.name() + "'");
    } else if (q->width() != node.width) {
      out.push_back("quantity '" + node.name + "' has width " + std::to_string(q->width()) +
                    " but config expects " + std::to_string(node.width));
    }
  }

  const auto& root = config.nodes()[config.root_pos()];
  int tangential = -1;
  for (int c = 0; c < static_cast<int>(root.components.size()); ++c)
    if (root.components[c] == "m") tangential = c;

  std::set<int> ids;
  for (const auto& p : dataset.paths) {
    std::string where = "path " + std::to_string(p.id);
    if (!ids.insert(p.id).second) out.push_back(where + ": duplicate id");
    int steps = -1;
    bool ok = true;
    for (const auto& q : dataset.schema) {
      auto it = p.quantities.find(q.name);
      if (it == p.quantities.end()) {
        out.push_back(where + ": missing quantity '" + q.name + "'");
        ok = false;
        continue;
      }
      const Series& s = it->second;
      if (s.cols() != q.width()) {
        out.push_back(where + ": quantity '" + q.name + "' has wrong width");
        ok = false;
      }
      if (steps < 0) steps = static_cast<int>(s.rows());
      if (s.rows() != steps) {
        out.push_back(where + ": quantities have differing step counts");
        ok = false;
      }
      if (!s.allFinite()) {
        out.push_back(where + ": non-finite values in '" + q.name + "'");
        ok = false;
      }
    }
    if (!ok) continue;
    if (steps < 2) out.push_back(where + ": fewer than 2 steps");
    auto rit = p.quantities.find(root.name);
    if (tangential >= 0 && rit != p.quantities.end() && (rit->second.col(tangential).array() < 0.0).any()) {
      out.push_back(where + ": negative tangential separation magnitude");
    }
    for (const auto& q : dataset.schema) {
      if (!q.unit_trace) continue;
      const Series& s = p.quantities.at(q.name);
      if (((s.rowwise().sum().array() - 1.0).abs() > 1e-9).any()) {
        out.push_back(where + ": '" + q.name + "' trace differs from 1");
      }
    }
  }

  std::set<int> train(dataset.train_ids.begin(), dataset.train_ids.end());
  if (dataset.train_ids.empty()) out.push_back("training split is empty");
  if (train.size() != dataset.train_ids.size()) out.push_back("training split has duplicate ids");
  for (int id : dataset.test_ids) {
    if (train.count(id)) out.push_back("path " + std::to_string(id) + " is in both splits");
  }
  for (const auto* ids_list : {&dataset.train_ids, &dataset.test_ids}) {
    for (int id : *ids_list)
      if (!ids.count(id)) out.push_back("split references unknown path " + std::to_string(id));
  }
  return out;
}

// -------------------------------------------------------------------- I/O

namespace {

constexpr char kBinaryMagic[8] = {'M', 'G', 'D', 'S', 'B', 'I', 'N', '1'};

nlohmann::json meta_to_json(const PathMeta& m) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : m.segments) segs.push_back({s.steps, s.rate_n, s.rate_m});
  nlohmann::json j{{"seed", m.seed}, {"segments", segs}};
  if (std::isfinite(m.rate_ratio)) j["rate_ratio"] = m.rate_ratio;
  else j["rate_ratio"] = nullptr;
  return j;
}

PathMeta meta_from_json(const nlohmann::json& j) {
  PathMeta m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.rate_ratio = j.contains("rate_ratio") && !j.at("rate_ratio").is_null()
                     ? j.at("rate_ratio").get<double>()
                     : std::numeric_limits<double>::infinity();
  if (j.contains("segments")) {
    for (const auto& s : j.at("segments")) {
      m.segments.push_back({s.at(0).get<int>(), s.at(1).get<double>(), s.at(2).get<double>()});
    }
  }
  return m;
}

std::string csv_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "path_%04d.csv", id);
  return buf;
}

void write_csv(const Schema& schema, const LoadingPath& p, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + file.string() + "'");
  bool first = true;
  for (const auto& q : schema) {
    for (const auto& c : q.components) {
      out << (first ? "" : ",") << q.name << "." << c;
      first = false;
    }
  }
  out << "\n";
  char buf[40];
  for (int t = 0; t < p.steps(); ++t) {
    first = true;
    for (const auto& q : schema) {
      const Series& s = p.at(q.name);
      for (int c = 0; c < q.width(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", s(t, c));
        out << (first ? "" : ",") << buf;
        first = false;
      }
    }
    out << "\n";
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + file.string() + "'");
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

LoadingPath read_csv(const Schema& schema, int id, const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + file.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kIo, "'" + file.string() + "' is empty");
  auto header = split_line(line);
  std::map<std::string, int> column;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) column[header[i]] = i;

  std::vector<std::vector<int>> cols(schema.size());
  for (std::size_t qi = 0; qi < schema.size(); ++qi) {
    for (const auto& c : schema[qi].components) {
      auto it = column.find(schema[qi].name + "." + c);
      if (it == column.end()) {
        throw Error(ErrorKind::kSchema, "path " + std::to_string(id) + " is missing column '" +
                                            schema[qi].name + "." + c + "'");
      }
      cols[qi].push_back(it->second);
    }
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::kIo, "'" + file.string() + "' has a malformed row");
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0') {
        throw Error(ErrorKind::kIo, "'" + file.string() + "' has a non-numeric cell '" + cells[i] + "'");
      }
    }
    rows.push_back(std::move(row));
  }

  LoadingPath p;
  p.id = id;
  for (std::size_t qi = 0; qi < schema.size(); ++qi) {
    Series s(static_cast<int>(rows.size()), schema[qi].width());
    for (int t = 0; t < s.rows(); ++t)
      for (int c = 0; c < s.cols(); ++c) s(t, c) = rows[t][cols[qi][c]];
    p.quantities[schema[qi].name] = std::move(s);
  }
  return p;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir, StorageMode mode,
                  const nlohmann::json& generator) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create '" + dir + "': " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "metagame-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["storage"] = mode == StorageMode::kCsv ? "csv" : "binary";
  auto& schema = manifest["schema"] = nlohmann::json::array();
  for (const auto& q : dataset.schema) {
    schema.push_back({{"name", q.name}, {"components", q.components}, {"unit_trace", q.unit_trace}});
  }
  manifest["train"] = dataset.train_ids;
  manifest["test"] = dataset.test_ids;
  if (!generator.is_null()) manifest["generator"] = generator;

  auto& paths = manifest["paths"] = nlohmann::json::array();
  for (const auto& p : dataset.paths) {
    nlohmann::json jp{{"id", p.id}, {"steps", p.steps()}, {"meta", meta_to_json(p.meta)}};
    if (mode == StorageMode::kCsv) {
      jp["file"] = csv_name(p.id);
      write_csv(dataset.schema, p, fs::path(dir) / csv_name(p.id));
    }
    paths.push_back(std::move(jp));
  }

  if (mode == StorageMode::kBinary) {
    manifest["binary_file"] = "paths.bin";
    std::ofstream out(fs::path(dir) / "paths.bin", std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write binary container in '" + dir + "'");
    out.write(kBinaryMagic, sizeof kBinaryMagic);
    std::uint32_t count = static_cast<std::uint32_t>(dataset.paths.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const auto& p : dataset.paths) {
      std::int32_t header[2] = {p.id, p.steps()};
      out.write(reinterpret_cast<const char*>(header), sizeof header);
      for (const auto& q : dataset.schema) {
        const Series& s = p.at(q.name);
        out.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(sizeof(double) * s.size()));
      }
    }
    if (!out) throw Error(ErrorKind::kIo, "failed writing binary container in '" + dir + "'");
  }

  std::ofstream mout(fs::path(dir) / "manifest.json");
  if (!mout) throw Error(ErrorKind::kIo, "cannot write manifest in '" + dir + "'");
  mout << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) throw Error(ErrorKind::kIo, "no manifest.json in '" + dir + "'");
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("corrupt dataset manifest: ") + ex.what());
  }

  Dataset ds;
  try {
    if (manifest.value("format", std::string()) != "metagame-dataset") {
      throw Error(ErrorKind::kSchema, "'" + dir + "' is not a dataset manifest");
    }
    int version = manifest.at("version").get<int>();
    if (version > kDatasetVersion) {
      throw Error(ErrorKind::kVersion, "dataset version " + std::to_string(version) +
                                           " is newer than supported version " +
                                           std::to_string(kDatasetVersion));
    }
    for (const auto& jq : manifest.at("schema")) {
      ds.schema.push_back({jq.at("name").get<std::string>(),
                           jq.at("components").get<std::vector<std::string>>(),
                           jq.value("unit_trace", false)});
    }
    ds.train_ids = manifest.at("train").get<std::vector<int>>();
    ds.test_ids = manifest.at("test").get<std::vector<int>>();
    const std::string storage = manifest.at("storage").get<std::string>();

    if (storage == "csv") {
      for (const auto& jp : manifest.at("paths")) {
        int id = jp.at("id").get<int>();
        auto p = read_csv(ds.schema, id, fs::path(dir) / jp.at("file").get<std::string>());
        p.meta = meta_from_json(jp.at("meta"));
        ds.paths.push_back(std::move(p));
      }
    } else if (storage == "binary") {
      std::ifstream in(fs::path(dir) / manifest.at("binary_file").get<std::string>(), std::ios::binary);
      if (!in) throw Error(ErrorKind::kIo, "missing binary container in '" + dir + "'");
      char magic[8];
      std::uint32_t count = 0;
      in.read(magic, sizeof magic);
      in.read(reinterpret_cast<char*>(&count), sizeof count);
      if (!in || std::memcmp(magic, kBinaryMagic, sizeof magic) != 0) {
        throw Error(ErrorKind::kIo, "corrupt binary container in '" + dir + "'");
      }
      const auto& jpaths = manifest.at("paths");
      if (count != jpaths.size()) throw Error(ErrorKind::kIo, "binary container path count mismatch");
      for (std::uint32_t i = 0; i < count; ++i) {
        std::int32_t header[2];
        in.read(reinterpret_cast<char*>(header), sizeof header);
        if (!in || header[1] < 0 || header[1] > 10'000'000) {
          throw Error(ErrorKind::kIo, "corrupt binary container in '" + dir + "'");
        }
        LoadingPath p;
        p.id = header[0];
        for (const auto& q : ds.schema) {
          Series s(header[1], q.width());
          in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(sizeof(double) * s.size()));
          p.quantities[q.name] = std::move(s);
        }
        if (!in) throw Error(ErrorKind::kIo, "truncated binary container in '" + dir + "'");
        p.meta = meta_from_json(jpaths.at(i).at("meta"));
        ds.paths.push_back(std::move(p));
      }
    } else {
      throw Error(ErrorKind::kSchema, "unknown storage mode '" + storage + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("corrupt dataset manifest: ") + ex.what());
  }

  // Structural checks that do not depend on a game config.
  for (const auto& p : ds.paths) {
    for (const auto& q : ds.schema) {
      if (p.at(q.name).rows() < 2) {
        throw Error(ErrorKind::kSchema, "path " + std::to_string(p.id) + " has fewer than 2 steps");
      }
    }
  }
  return ds;
}

}  // namespace metagame
