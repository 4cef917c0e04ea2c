#pragma once

// Small fully connected network with tanh hidden layers and a linear output,
// plus Adam. Shared by the mlp-window regressor and the policy/value net.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace metagame {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Mlp {
 public:
  Mlp() = default;
  /// sizes = {inputs, hidden..., outputs}.
  explicit Mlp(std::vector<int> sizes);

  /// Glorot-uniform weights, zero biases. zero_last zeroes the output layer.
  void init(std::uint64_t seed, bool zero_last = false);

  const std::vector<int>& sizes() const { return sizes_; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  int num_params() const { return static_cast<int>(params_.size()); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  /// Activations kept for backward; acts[0] is the input batch.
  struct Tape {
    std::vector<Matrix> acts;
  };

  /// x is batch x inputs; returns batch x outputs.
  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;

  /// grad += dL/dparams, given dL/doutput for the taped batch.
  void backward(const Tape& tape, const Matrix& d_out, Vector& grad) const;

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.params_.size() == b.params_.size() && a.params_ == b.params_;
  }

 private:
  int weight_offset(int layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  std::vector<int> offsets_;
  Vector params_;
};

struct Adam {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector m, v;
  long steps = 0;

  void step(Vector& params, const Vector& grad);
};

}  // namespace metagame
