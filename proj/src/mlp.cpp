#include "metagame/mlp.hpp"

#include <cmath>
#include <random>

#include "metagame/error.hpp"

namespace metagame {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw Error(ErrorKind::kInvalidArgument, "network needs at least two layers");
  int total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw Error(ErrorKind::kInvalidArgument, "layer sizes must be positive");
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(total);
}

void Mlp::init(std::uint64_t seed, bool zero_last) {
  std::mt19937_64 rng(seed);
  const int layers = static_cast<int>(sizes_.size()) - 1;
  params_.setZero();
  for (int l = 0; l < layers; ++l) {
    if (zero_last && l == layers - 1) break;
    const int in = sizes_[l], out = sizes_[l + 1];
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / (in + out));
    for (int i = 0; i < in * out; ++i) params_[offsets_[l] + i] = limit * u(rng);
  }
}

Matrix Mlp::forward(const Matrix& x, Tape* tape) const {
  if (x.cols() != inputs()) throw Error(ErrorKind::kDimension, "network input width mismatch");
  const int layers = static_cast<int>(sizes_.size()) - 1;
  if (tape) {
    tape->acts.clear();
    tape->acts.push_back(x);
  }
  Matrix h = x;
  for (int l = 0; l < layers; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const Matrix> w(params_.data() + offsets_[l], in, out);
    Eigen::Map<const Eigen::RowVectorXd> b(params_.data() + offsets_[l] + in * out, out);
    Matrix z = h * w;
    z.rowwise() += b;
    if (l + 1 < layers) z = z.array().tanh();
    h = std::move(z);
    if (tape && l + 1 < layers) tape->acts.push_back(h);
  }
  return h;
}

void Mlp::backward(const Tape& tape, const Matrix& d_out, Vector& grad) const {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
  Matrix delta = d_out;
  for (int l = layers - 1; l >= 0; --l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const Matrix& h = tape.acts[l];
    Eigen::Map<Matrix> gw(grad.data() + offsets_[l], in, out);
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + offsets_[l] + in * out, out);
    gw.noalias() += h.transpose() * delta;
    gb += delta.colwise().sum();
    if (l > 0) {
      Eigen::Map<const Matrix> w(params_.data() + offsets_[l], in, out);
      Matrix back = delta * w.transpose();
      delta = back.array() * (1.0 - h.array().square());
    }
  }
}

void Adam::step(Vector& params, const Vector& grad) {
  if (m.size() != params.size()) {
    m = Vector::Zero(params.size());
    v = Vector::Zero(params.size());
  }
  ++steps;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  params.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon);
}

}  // namespace metagame
