#pragma once

// Score system: per-path MSE, eCDF percentile accuracy, k-sample
// Anderson-Darling consistency, composite SCORE and cached evaluation.

#include <cstdint>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metagame/dataset.hpp"
#include "metagame/game.hpp"
#include "metagame/model.hpp"

namespace metagame {

/// Mean over steps and columns of the squared standardized error.
double sample_mse(const Series& pred, const Series& target, const Scaler& scaler);

/// Smallest sorted value v_r with r / N >= percent / 100.
double ecdf_percentile(std::vector<double> values, double percent);

double accuracy_measure(const std::vector<double>& mses, double percent, double eps_crit);

struct AdResult {
  double statistic = 0.0;  // standardized (A2akN - (k-1)) / sigma
  double p_value = 1.0;
};

/// Two-sample Scholz-Stephens test, midrank (tie-adjusted) form.
AdResult ad_two_sample(const std::vector<double>& x, const std::vector<double>& y);

/// p-value from the standardized statistic for k samples, interpolated in
/// log(significance) over the published critical-value table.
double ad_p_value(double statistic, int k);

int consistency_measure(double p_value, double alpha);

/// (product of critical) * (sum of weight * measure).
double composite_score(const std::vector<std::pair<double, double>>& performance,
                       const std::vector<double>& critical);

inline constexpr const char* kAccuracyCalibration = "accuracy_calibration";
inline constexpr const char* kAccuracyPrediction = "accuracy_prediction";
inline constexpr const char* kConsistency = "consistency";

struct ScoreSpec {
  // measure name -> weight
  std::vector<std::pair<std::string, double>> performance{
      {kAccuracyCalibration, 0.45}, {kAccuracyPrediction, 0.45}, {kConsistency, 0.1}};
  std::vector<std::string> critical;
  double percent = 90.0;
  double eps_crit = 1e-6;
  double alpha = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static ScoreSpec from_json(const nlohmann::json& j);
  std::string fingerprint() const;
  friend bool operator==(const ScoreSpec&, const ScoreSpec&) = default;
};

struct ScoreReport {
  std::string digraph;  // canonical key, hex
  double a_calibration = 0.0;
  double a_prediction = 0.0;
  int a_consistency = 0;
  double score = 0.0;
  std::vector<double> train_mse;
  std::vector<double> test_mse;
  double ad_statistic = 0.0;
  double p_value = 0.0;

  /// Recomputes SCORE from the stored measures.
  double recompute(const ScoreSpec& spec) const;

  nlohmann::json to_json() const;
  static ScoreReport from_json(const nlohmann::json& j);
  friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

/// Thread-safe memo of evaluated digraphs with atomic get-or-compute.
/// With a directory, reports are also persisted as JSON files.
class ScoreCache {
 public:
  ScoreCache() = default;
  explicit ScoreCache(std::string directory);

  template <typename Fn>
  std::pair<ScoreReport, bool> get_or_compute(const std::string& key, Fn&& compute);

  std::optional<ScoreReport> find(const std::string& key) const;
  std::size_t size() const;
  std::uint64_t hits() const;
  std::uint64_t misses() const;
  const std::string& directory() const { return directory_; }

 private:
  std::optional<ScoreReport> load_file(const std::string& key) const;
  void store_file(const std::string& key, const ScoreReport& report) const;

  std::string directory_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_future<ScoreReport>> entries_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

std::string score_cache_key(const EdgeBits& digraph, const Dataset& dataset, const ScoreSpec& spec,
                            const RegressorHyper& hyper);

/// Calibrates on the training split, predicts both splits blind and scores.
ScoreReport evaluate_digraph(const GameConfig& config, const EdgeBits& digraph, const Dataset& dataset,
                             const ScoreSpec& spec, const RegressorHyper& hyper, ScoreCache* cache = nullptr,
                             bool* cache_hit = nullptr);

/// Same, with the dataset fingerprint precomputed.
ScoreReport evaluate_digraph(const GameConfig& config, const EdgeBits& digraph, const Dataset& dataset,
                             std::uint64_t dataset_fingerprint, const ScoreSpec& spec,
                             const RegressorHyper& hyper, ScoreCache* cache, bool* cache_hit = nullptr);

/// Columns: digraph, score, a_calibration, a_prediction, a_consistency.
void write_scores_csv(std::ostream& out, const std::vector<ScoreReport>& reports);

// ------------------------------------------------------------- template

template <typename Fn>
std::pair<ScoreReport, bool> ScoreCache::get_or_compute(const std::string& key, Fn&& compute) {
  std::unique_lock lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) {
    ++hits_;
    auto fut = it->second;
    lock.unlock();
    return {fut.get(), true};
  }
  if (auto stored = load_file(key)) {
    ++hits_;
    std::promise<ScoreReport> ready;
    ready.set_value(*stored);
    entries_.emplace(key, ready.get_future().share());
    return {*stored, true};
  }
  ++misses_;
  std::promise<ScoreReport> promise;
  entries_.emplace(key, promise.get_future().share());
  lock.unlock();
  try {
    ScoreReport report = compute();
    store_file(key, report);
    promise.set_value(report);
    return {report, false};
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard relock(mutex_);
    entries_.erase(key);
    throw;
  }
}

}  // namespace metagame
