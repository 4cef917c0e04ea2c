#include "metagame/scoring.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "metagame/error.hpp"

namespace metagame {

double sample_mse(const Series& pred, const Series& target, const Scaler& scaler) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorKind::kDimension, "prediction and target shapes differ");
  }
  if (pred.size() == 0) throw Error(ErrorKind::kInvalidArgument, "empty sample");
  if (!pred.allFinite() || !target.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite sample values");
  return (scaler.transform(target) - scaler.transform(pred)).array().square().mean();
}

double ecdf_percentile(std::vector<double> values, double percent) {
  if (values.empty()) throw Error(ErrorKind::kInvalidArgument, "eCDF of an empty list");
  if (!(percent > 0.0 && percent <= 100.0)) throw Error(ErrorKind::kInvalidArgument, "percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (std::size_t r = 1; r <= values.size(); ++r) {
    if (static_cast<double>(r) * 100.0 >= percent * n) return values[r - 1];
  }
  return values.back();
}

double accuracy_measure(const std::vector<double>& mses, double percent, double eps_crit) {
  if (!(eps_crit > 0.0 && eps_crit < 1.0)) throw Error(ErrorKind::kInvalidArgument, "eps_crit must be in (0, 1)");
  for (double v : mses) {
    if (std::isnan(v) || v < 0.0) throw Error(ErrorKind::kInvalidArgument, "MSE values must be non-negative");
  }
  double e = std::max(ecdf_percentile(mses, percent), eps_crit);
  double a = std::log(e) / std::log(eps_crit);
  return a > 0.0 ? a : 0.0;
}

AdResult ad_two_sample(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 5 || y.size() < 5) throw Error(ErrorKind::kInvalidArgument, "AD test needs at least 5 points per sample");
  for (const auto* s : {&x, &y})
    for (double v : *s)
      if (std::isnan(v)) throw Error(ErrorKind::kNumeric, "AD test on NaN");

  const std::array<std::vector<double>, 2> samples{x, y};
  std::vector<double> z;
  z.insert(z.end(), x.begin(), x.end());
  z.insert(z.end(), y.begin(), y.end());
  std::sort(z.begin(), z.end());
  const double n_total = static_cast<double>(z.size());

  std::vector<double> distinct;
  std::unique_copy(z.begin(), z.end(), std::back_inserter(distinct));
  // l_j: multiplicity; b_j: midrank count of pooled values below z*_j.
  std::vector<double> l(distinct.size()), b(distinct.size());
  for (std::size_t j = 0; j < distinct.size(); ++j) {
    auto lo = std::lower_bound(z.begin(), z.end(), distinct[j]);
    auto hi = std::upper_bound(z.begin(), z.end(), distinct[j]);
    l[j] = static_cast<double>(hi - lo);
    b[j] = static_cast<double>(lo - z.begin()) + l[j] / 2.0;
  }

  double a2 = 0.0;
  for (const auto& s_in : samples) {
    std::vector<double> s = s_in;
    std::sort(s.begin(), s.end());
    const double ni = static_cast<double>(s.size());
    double inner = 0.0;
    for (std::size_t j = 0; j < distinct.size(); ++j) {
      auto lo = std::lower_bound(s.begin(), s.end(), distinct[j]);
      auto hi = std::upper_bound(s.begin(), s.end(), distinct[j]);
      double m = static_cast<double>(hi - s.begin()) - static_cast<double>(hi - lo) / 2.0;
      double num = n_total * m - b[j] * ni;
      double den = b[j] * (n_total - b[j]) - n_total * l[j] / 4.0;
      inner += l[j] / n_total * num * num / den;
    }
    a2 += inner / ni;
  }
  a2 *= (n_total - 1.0) / n_total;

  const double k = 2.0, n = n_total;
  const double H = 1.0 / static_cast<double>(x.size()) + 1.0 / static_cast<double>(y.size());
  double h = 0.0;
  for (int i = 1; i <= static_cast<int>(n) - 1; ++i) h += 1.0 / i;
  double g = 0.0;
  for (int i = 1; i <= static_cast<int>(n) - 2; ++i) {
    double inner_sum = 0.0;
    for (int j = i + 1; j <= static_cast<int>(n) - 1; ++j) inner_sum += 1.0 / j;
    g += inner_sum / (n - i);
  }
  const double a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * H;
  const double bb = (2 * g - 4) * k * k + 8 * h * k + (2 * g - 14 * h - 4) * H - 8 * h + 4 * g - 6;
  const double c = (6 * h + 2 * g - 2) * k * k + (4 * h - 4 * g + 6) * k + (2 * h - 6) * H + 4 * h;
  const double d = (2 * h + 6) * k * k - 4 * h * k;
  const double var = (a * n * n * n + bb * n * n + c * n + d) / ((n - 1) * (n - 2) * (n - 3));

  AdResult r;
  r.statistic = (a2 - (k - 1)) / std::sqrt(var);
  r.p_value = ad_p_value(r.statistic, 2);
  return r;
}

double ad_p_value(double statistic, int k) {
  if (k < 2) throw Error(ErrorKind::kInvalidArgument, "AD test needs k >= 2");
  static constexpr std::array<double, 7> b0{0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085};
  static constexpr std::array<double, 7> b1{-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615};
  static constexpr std::array<double, 7> b2{-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154};
  static constexpr std::array<double, 7> sig{0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001};
  const double m = k - 1.0;
  std::array<double, 7> crit{};
  for (int i = 0; i < 7; ++i) crit[i] = b0[i] + b1[i] / std::sqrt(m) + b2[i] / m;

  int seg = 0;
  if (statistic >= crit[6]) seg = 5;
  else if (statistic > crit[0]) {
    while (statistic > crit[seg + 1]) ++seg;
  }
  const double t = (statistic - crit[seg]) / (crit[seg + 1] - crit[seg]);
  const double log_p = std::log(sig[seg]) + t * (std::log(sig[seg + 1]) - std::log(sig[seg]));
  return std::clamp(std::exp(log_p), 1e-6, 1.0 - 1e-6);
}

int consistency_measure(double p_value, double alpha) {
  if (!(p_value >= 0.0 && p_value <= 1.0 && alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "p-value and alpha must be in [0, 1]");
  }
  return p_value < alpha ? 0 : 1;
}

double composite_score(const std::vector<std::pair<double, double>>& performance,
                       const std::vector<double>& critical) {
  double wsum = 0.0, total = 0.0;
  for (const auto& [measure, weight] : performance) {
    if (!(measure >= 0.0 && measure <= 1.0 && weight >= 0.0 && weight <= 1.0)) {
      throw Error(ErrorKind::kInvalidArgument, "measures and weights must lie in [0, 1]");
    }
    wsum += weight;
    total += weight * measure;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw Error(ErrorKind::kInvalidArgument, "performance weights must sum to 1");
  double gate = 1.0;
  for (double c : critical) {
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "critical measures must lie in [0, 1]");
    gate *= c;
  }
  return gate * total;
}

// ------------------------------------------------------------------ spec

namespace {

bool known_measure(const std::string& name) {
  return name == kAccuracyCalibration || name == kAccuracyPrediction || name == kConsistency;
}

double measure_value(const ScoreReport& r, const std::string& name) {
  if (name == kAccuracyCalibration) return r.a_calibration;
  if (name == kAccuracyPrediction) return r.a_prediction;
  return r.a_consistency;
}

}  // namespace

void ScoreSpec::validate() const {
  double wsum = 0.0;
  for (const auto& [name, w] : performance) {
    if (!known_measure(name)) throw Error(ErrorKind::kInvalidConfig, "unknown measure '" + name + "'");
    if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorKind::kInvalidConfig, "weights must lie in [0, 1]");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw Error(ErrorKind::kInvalidConfig, "performance weights must sum to 1");
  for (const auto& name : critical)
    if (!known_measure(name)) throw Error(ErrorKind::kInvalidConfig, "unknown measure '" + name + "'");
  if (!(eps_crit > 0.0 && eps_crit < 1.0)) throw Error(ErrorKind::kInvalidConfig, "eps_crit must be in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::kInvalidConfig, "alpha must be in (0, 1)");
  if (!(percent > 0.0 && percent <= 100.0)) throw Error(ErrorKind::kInvalidConfig, "percent must be in (0, 100]");
}

nlohmann::json ScoreSpec::to_json() const {
  nlohmann::json perf = nlohmann::json::object();
  for (const auto& [name, w] : performance) perf[name] = w;
  return {{"performance", perf}, {"critical", critical}, {"percent", percent},
          {"eps_crit", eps_crit}, {"alpha", alpha}};
}

ScoreSpec ScoreSpec::from_json(const nlohmann::json& j) {
  ScoreSpec s;
  try {
    if (j.contains("performance")) {
      s.performance.clear();
      for (const auto& [name, w] : j.at("performance").items()) s.performance.emplace_back(name, w.get<double>());
    }
    s.critical = j.value("critical", s.critical);
    s.percent = j.value("percent", s.percent);
    s.eps_crit = j.value("eps_crit", s.eps_crit);
    s.alpha = j.value("alpha", s.alpha);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidConfig, std::string("bad score spec: ") + ex.what());
  }
  s.validate();
  return s;
}

std::string ScoreSpec::fingerprint() const { return to_json().dump(); }

double ScoreReport::recompute(const ScoreSpec& spec) const {
  std::vector<std::pair<double, double>> perf;
  for (const auto& [name, w] : spec.performance) perf.emplace_back(measure_value(*this, name), w);
  std::vector<double> crit;
  for (const auto& name : spec.critical) crit.push_back(measure_value(*this, name));
  return composite_score(perf, crit);
}

nlohmann::json ScoreReport::to_json() const {
  return {{"digraph", digraph},         {"score", score},           {"a_calibration", a_calibration},
          {"a_prediction", a_prediction}, {"a_consistency", a_consistency}, {"ad_statistic", ad_statistic},
          {"p_value", p_value},         {"train_mse", train_mse},   {"test_mse", test_mse}};
}

ScoreReport ScoreReport::from_json(const nlohmann::json& j) {
  ScoreReport r;
  try {
    r.digraph = j.at("digraph").get<std::string>();
    r.score = j.at("score").get<double>();
    r.a_calibration = j.at("a_calibration").get<double>();
    r.a_prediction = j.at("a_prediction").get<double>();
    r.a_consistency = j.at("a_consistency").get<int>();
    r.ad_statistic = j.at("ad_statistic").get<double>();
    r.p_value = j.at("p_value").get<double>();
    r.train_mse = j.at("train_mse").get<std::vector<double>>();
    r.test_mse = j.at("test_mse").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kSchema, std::string("bad score report: ") + ex.what());
  }
  return r;
}

// ----------------------------------------------------------------- cache

namespace fs = std::filesystem;

ScoreCache::ScoreCache(std::string directory) : directory_(std::move(directory)) {
  if (!directory_.empty()) {
    std::error_code ec;
    fs::create_directories(directory_, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot create cache directory '" + directory_ + "'");
  }
}

namespace {

std::string key_file_name(const std::string& key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx.json", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::optional<ScoreReport> ScoreCache::load_file(const std::string& key) const {
  if (directory_.empty()) return std::nullopt;
  std::ifstream in(fs::path(directory_) / key_file_name(key));
  if (!in) return std::nullopt;
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("key", std::string()) != key) return std::nullopt;
    return ScoreReport::from_json(j.at("report"));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void ScoreCache::store_file(const std::string& key, const ScoreReport& report) const {
  if (directory_.empty()) return;
  auto target = fs::path(directory_) / key_file_name(key);
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorKind::kIo, "cannot write to cache directory '" + directory_ + "'");
    out << nlohmann::json{{"key", key}, {"report", report.to_json()}}.dump();
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot write to cache directory '" + directory_ + "'");
}

std::optional<ScoreReport> ScoreCache::find(const std::string& key) const {
  std::shared_future<ScoreReport> fut;
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    fut = it->second;
  }
  return fut.get();
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::uint64_t ScoreCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::uint64_t ScoreCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

namespace {

std::string cache_key(const EdgeBits& digraph, std::uint64_t dataset_fingerprint, const ScoreSpec& spec,
                      const RegressorHyper& hyper) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(dataset_fingerprint));
  return digraph.to_hex() + "|" + buf + "|" + hyper.fingerprint() + "|" + spec.fingerprint();
}

}  // namespace

std::string score_cache_key(const EdgeBits& digraph, const Dataset& dataset, const ScoreSpec& spec,
                            const RegressorHyper& hyper) {
  return cache_key(digraph, dataset.fingerprint(), spec, hyper);
}

// ------------------------------------------------------------ evaluation

namespace {

ScoreReport compute_report(const GameConfig& config, const EdgeBits& digraph, const Dataset& dataset,
                           const ScoreSpec& spec, const RegressorHyper& hyper) {
  if (auto violations = validate_dataset(config, dataset); !violations.empty()) {
    throw Error(ErrorKind::kSchema, "dataset does not match config: " + violations.front());
  }
  auto plan = extract_plan(config, digraph, hyper.window);
  auto model = calibrate(config, plan, dataset.split(Split::kTrain), hyper);
  const int leaf = config.leaf_id();
  const std::string& leaf_name = config.node(leaf).name;
  const Scaler& scaler = model.scalers.at(leaf);
  const std::string& root_name = config.node(config.root_id()).name;

  auto mses = [&](Split which) {
    std::vector<double> out;
    for (const auto* p : dataset.split(which)) {
      Series pred = predict_blind(model, p->at(root_name)).at(leaf);
      // A diverged cascade scores as the worst possible fit.
      out.push_back(pred.allFinite() ? sample_mse(pred, p->at(leaf_name), scaler) : 1e300);
      if (!std::isfinite(out.back())) out.back() = 1e300;
    }
    return out;
  };

  ScoreReport r;
  r.digraph = digraph.to_hex();
  r.train_mse = mses(Split::kTrain);
  r.test_mse = mses(Split::kTest);
  r.a_calibration = accuracy_measure(r.train_mse, spec.percent, spec.eps_crit);
  r.a_prediction = accuracy_measure(r.test_mse, spec.percent, spec.eps_crit);
  auto ad = ad_two_sample(r.train_mse, r.test_mse);
  r.ad_statistic = ad.statistic;
  r.p_value = ad.p_value;
  r.a_consistency = consistency_measure(ad.p_value, spec.alpha);
  r.score = r.recompute(spec);
  return r;
}

}  // namespace

ScoreReport evaluate_digraph(const GameConfig& config, const EdgeBits& digraph, const Dataset& dataset,
                             std::uint64_t dataset_fingerprint, const ScoreSpec& spec,
                             const RegressorHyper& hyper, ScoreCache* cache, bool* cache_hit) {
  spec.validate();
  if (!is_admissible(config, digraph)) {
    throw Error(ErrorKind::kInadmissible, "digraph is not admissible: " + admissibility_violation(config, digraph));
  }
  if (!cache) {
    if (cache_hit) *cache_hit = false;
    return compute_report(config, digraph, dataset, spec, hyper);
  }
  std::string key = cache_key(digraph, dataset_fingerprint, spec, hyper);
  auto [report, hit] =
      cache->get_or_compute(key, [&] { return compute_report(config, digraph, dataset, spec, hyper); });
  if (cache_hit) *cache_hit = hit;
  return report;
}

ScoreReport evaluate_digraph(const GameConfig& config, const EdgeBits& digraph, const Dataset& dataset,
                             const ScoreSpec& spec, const RegressorHyper& hyper, ScoreCache* cache,
                             bool* cache_hit) {
  return evaluate_digraph(config, digraph, dataset, cache ? dataset.fingerprint() : 0, spec, hyper, cache,
                          cache_hit);
}

void write_scores_csv(std::ostream& out, const std::vector<ScoreReport>& reports) {
  out << "digraph,score,a_calibration,a_prediction,a_consistency\n";
  char buf[128];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%d\n", r.score, r.a_calibration, r.a_prediction,
                  r.a_consistency);
    out << r.digraph << buf;
  }
}

}  // namespace metagame
