#pragma once

// Digraph -> executable surrogate: regressor groups over windowed histories,
// teacher-forced calibration and cascaded (blind) prediction.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "metagame/dataset.hpp"
#include "metagame/game.hpp"
#include "metagame/mlp.hpp"

namespace metagame {

inline constexpr int kDefaultWindow = 20;

struct RegressorGroup {
  std::vector<int> inputs;   // node ids, ascending
  std::vector<int> outputs;  // node ids, ascending
  int position = 0;          // longest-path depth from the root
  friend bool operator==(const RegressorGroup&, const RegressorGroup&) = default;
};

struct ModelPlan {
  EdgeBits digraph;
  std::vector<RegressorGroup> groups;
  int window = kDefaultWindow;
  friend bool operator==(const ModelPlan&, const ModelPlan&) = default;
};

/// Groups the active nodes of an admissible digraph by predecessor set.
ModelPlan extract_plan(const GameConfig& config, const EdgeBits& digraph, int window = kDefaultWindow);

class Scaler {
 public:
  static constexpr double kFloor = 1e-12;

  Scaler() = default;
  Scaler(Vector mean, Vector stddev);

  /// Column statistics over the stacked rows of all series.
  static Scaler fit(const std::vector<const Series*>& series);
  static Scaler identity(int width);

  int width() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Vector& stddev() const { return std_; }

  Series transform(const Series& x) const;
  Series inverse(const Series& z) const;

  friend bool operator==(const Scaler& a, const Scaler& b) {
    return a.mean_.size() == b.mean_.size() && a.mean_ == b.mean_ && a.std_ == b.std_;
  }

 private:
  Vector mean_;
  Vector std_;
};

/// Row t holds steps t-W+1 .. t (oldest first); rows before 0 are zeros.
Matrix window_features(const Series& series, int window);

enum class RegressorFamily { kRidgeWindow, kMlpWindow };

struct RegressorHyper {
  RegressorFamily family = RegressorFamily::kRidgeWindow;
  int window = kDefaultWindow;
  double lambda = 1e-6;
  std::vector<int> hidden{16, 16};
  int epochs = 200;
  int batch = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  static RegressorHyper paper_scale();

  nlohmann::json to_json() const;
  static RegressorHyper from_json(const nlohmann::json& j);
  /// Stable text key used by the score cache.
  std::string fingerprint() const;
  friend bool operator==(const RegressorHyper&, const RegressorHyper&) = default;
};

class Regressor {
 public:
  Regressor() = default;
  Regressor(const RegressorHyper& hyper, int in_dim, int out_dim);

  /// Returns the final training MSE.
  double fit(const Matrix& x, const Matrix& y, std::uint64_t seed);
  Matrix predict(const Matrix& x) const;

  const RegressorHyper& hyper() const { return hyper_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  /// Ridge: coefficients (in x out, column-major) then intercept. MLP: network parameters.
  Vector parameters() const;
  void set_parameters(const Vector& p);

  /// MSE loss and its gradient for the MLP family (used by gradient checks).
  double loss_and_gradient(const Matrix& x, const Matrix& y, Vector* grad) const;

  friend bool operator==(const Regressor& a, const Regressor& b) {
    return a.hyper_ == b.hyper_ && a.in_dim_ == b.in_dim_ && a.out_dim_ == b.out_dim_ &&
           a.parameters() == b.parameters();
  }

 private:
  RegressorHyper hyper_;
  int in_dim_ = 0;
  int out_dim_ = 0;
  Matrix coef_;
  Eigen::RowVectorXd intercept_;
  Mlp net_;
};

/// Process-wide number of Regressor::fit calls.
std::uint64_t regressor_fit_count();

struct NodeInfo {
  std::string name;
  int width = 0;
  friend bool operator==(const NodeInfo&, const NodeInfo&) = default;
};

struct CalibratedModel {
  ModelPlan plan;
  RegressorHyper hyper;
  std::map<int, NodeInfo> nodes;  // every node the plan touches
  std::map<int, Scaler> scalers;
  std::vector<Regressor> regressors;  // one per group
  std::vector<double> train_losses;   // one per group

  int root_id = 0;
  int leaf_id = 0;

  friend bool operator==(const CalibratedModel&, const CalibratedModel&) = default;
};

/// Fits scalers on `train` and every group teacher-forced.
CalibratedModel calibrate(const GameConfig& config, const ModelPlan& plan,
                          const std::vector<const LoadingPath*>& train, const RegressorHyper& hyper);

/// Cascaded prediction from the separation history alone; physical units.
std::map<int, Series> predict_blind(const CalibratedModel& model, const Series& root_series);

struct GroupResidual {
  std::vector<int> outputs;
  Series predicted;  // physical units, columns = concatenated outputs
  Series residual;   // target - predicted
  double mse = 0.0;  // standardized, averaged over steps and columns
};

/// Each group driven by ground-truth inputs from `path`.
std::vector<GroupResidual> predict_teacher_forced(const CalibratedModel& model, const LoadingPath& path);

inline constexpr int kModelVersion = 1;

std::string serialize_model(const CalibratedModel& model);
CalibratedModel deserialize_model(const std::string& bytes);
nlohmann::json model_to_json(const CalibratedModel& model);
CalibratedModel model_from_json(const nlohmann::json& j);
void save_model(const CalibratedModel& model, const std::string& file);
CalibratedModel load_model(const std::string& file);

}  // namespace metagame
