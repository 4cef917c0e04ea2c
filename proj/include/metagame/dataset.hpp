#pragma once

// Loading-path datasets: the ingestion format for externally produced
// micromechanics data, and a seeded synthetic generator whose traction
// response follows a known (planted) digraph.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "metagame/game.hpp"

namespace metagame {

/// T x width matrix, one row per loading step.
using Series = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct QuantitySpec {
  std::string name;
  std::vector<std::string> components;
  // Components must sum to one at every step (fabric tensors).
  bool unit_trace = false;

  int width() const { return static_cast<int>(components.size()); }
  friend bool operator==(const QuantitySpec&, const QuantitySpec&) = default;
};

using Schema = std::vector<QuantitySpec>;

/// Every quantity known to the two shipped game presets.
Schema default_schema();

struct Segment {
  int steps = 0;
  double rate_n = 0.0;
  double rate_m = 0.0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct PathMeta {
  double rate_ratio = 0.0;  // base normal / tangential rate
  std::vector<Segment> segments;
  std::uint64_t seed = 0;
  friend bool operator==(const PathMeta&, const PathMeta&) = default;
};

struct LoadingPath {
  int id = 0;
  std::map<std::string, Series> quantities;
  PathMeta meta;

  int steps() const;
  const Series& at(const std::string& name) const;
  friend bool operator==(const LoadingPath&, const LoadingPath&) = default;
};

enum class Split { kTrain, kTest };

struct Dataset {
  Schema schema;
  std::vector<LoadingPath> paths;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  const LoadingPath& path(int id) const;
  std::vector<const LoadingPath*> split(Split which) const;
  const QuantitySpec* find(const std::string& name) const;

  /// FNV-1a over schema, split membership and every stored value.
  std::uint64_t fingerprint() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ------------------------------------------------------------- generation

struct LoadingProtocol {
  enum class Mode { kMixed, kMonotoneNormal };
  Mode mode = Mode::kMixed;
  int steps = 200;
  int min_segments = 3;
  int max_segments = 8;
  double max_rate = 0.002;  // separation increment per step
};

struct SeparationHistory {
  Series delta;  // T x 2: (delta_n, delta_m)
  PathMeta meta;
};

/// Seeded separation histories built from piecewise-constant rate segments
/// with unloading/reloading reversals; delta_m is kept non-negative.
std::vector<SeparationHistory> generate_paths(const LoadingProtocol& protocol, int n_paths,
                                              std::uint64_t seed);

enum class TruthKind {
  // Chained finite-memory linear recurrences delta -> CN -> {phi, A_f} -> t.
  kLinearMemory,
  // Nonlinear compaction/dilation, saturating coordination, fabric rotation
  // and damage-friction traction.
  kDamageFriction,
};

struct TruthModel {
  TruthKind kind = TruthKind::kLinearMemory;
  double noise = 0.0;
  std::uint64_t seed = 0;
  // Kernel length of the linear-memory recurrences, in steps.
  int memory = 20;
  // Pre-history values for the linear-memory recurrences. make_dataset sets
  // them to the training-split means.
  std::map<std::string, std::vector<double>> rest;

  /// Digraph through which the traction actually depends on the separation.
  std::vector<std::pair<std::string, std::string>> hidden_edges() const;
  /// Quantities whose pre-history values matter, in dependency order.
  std::vector<std::string> rest_order() const;

  nlohmann::json to_json() const;
};

TruthModel default_truth();

LoadingPath simulate_truth(const TruthModel& truth, const SeparationHistory& separations, int id);

/// Generates n_train + n_test paths, shuffles them by seed and assigns the
/// first n_train to the training split.
Dataset make_dataset(const GameConfig& config, TruthModel truth, int n_train, int n_test,
                     std::uint64_t seed, const LoadingProtocol& protocol = {});

/// Default synthetic dataset used by the acceptance suite and the CLI.
inline constexpr std::uint64_t kDefaultDatasetSeed = 2019;
Dataset make_default_dataset(const GameConfig& config, TruthModel* truth_out = nullptr);

/// The truth after pre-history calibration, as used by make_dataset.
TruthModel calibrated_truth(TruthModel truth, const std::vector<SeparationHistory>& train);

/// Hidden digraph of a truth model as an edge set of `config`.
EdgeBits hidden_digraph(const GameConfig& config, const TruthModel& truth);

// -------------------------------------------------------------------- I/O

enum class StorageMode { kCsv, kBinary };

inline constexpr int kDatasetVersion = 1;

/// Writes `<dir>/manifest.json` plus per-path CSV files or one binary file.
void save_dataset(const Dataset& dataset, const std::string& dir, StorageMode mode,
                  const nlohmann::json& generator = nullptr);
Dataset load_dataset(const std::string& dir);

/// Empty when the dataset is usable with `config`.
std::vector<std::string> validate_dataset(const GameConfig& config, const Dataset& dataset);

}  // namespace metagame
