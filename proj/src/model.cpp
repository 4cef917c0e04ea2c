#include "metagame/model.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <functional>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "metagame/error.hpp"
#include "metagame/random.hpp"

namespace metagame {

// ------------------------------------------------------------------ plan

ModelPlan extract_plan(const GameConfig& config, const EdgeBits& digraph, int window) {
  if (window < 1) throw Error(ErrorKind::kInvalidArgument, "window must be >= 1");
  if (auto why = admissibility_violation(config, digraph); !why.empty()) {
    throw Error(ErrorKind::kInadmissible, "digraph is not admissible: " + why);
  }
  std::map<int, std::set<int>> preds;
  for (int e : digraph.indices()) {
    int from = config.nodes()[config.source_pos(e)].id;
    int to = config.nodes()[config.target_pos(e)].id;
    preds[to].insert(from);
  }

  std::map<int, int> depth;
  const int root = config.root_id();
  std::function<int(int)> depth_of = [&](int node) -> int {
    if (node == root) return 0;
    if (auto it = depth.find(node); it != depth.end()) return it->second;
    int d = 0;
    for (int p : preds.at(node)) d = std::max(d, depth_of(p) + 1);
    depth[node] = d;
    return d;
  };

  std::map<std::vector<int>, std::vector<int>> by_inputs;
  for (const auto& [node, ps] : preds) {
    by_inputs[std::vector<int>(ps.begin(), ps.end())].push_back(node);
  }
  ModelPlan plan;
  plan.digraph = digraph;
  plan.window = window;
  for (auto& [inputs, outputs] : by_inputs) {
    std::sort(outputs.begin(), outputs.end());
    plan.groups.push_back({inputs, outputs, depth_of(outputs.front())});
  }
  std::stable_sort(plan.groups.begin(), plan.groups.end(),
                   [](const RegressorGroup& a, const RegressorGroup& b) { return a.position < b.position; });
  return plan;
}

// ---------------------------------------------------------------- scaling

Scaler::Scaler(Vector mean, Vector stddev) : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw Error(ErrorKind::kDimension, "scaler mean/std widths differ");
  std_ = std_.cwiseMax(kFloor);
}

Scaler Scaler::fit(const std::vector<const Series*>& series) {
  if (series.empty()) throw Error(ErrorKind::kInvalidArgument, "scaler needs data");
  const int width = static_cast<int>(series.front()->cols());
  Vector sum = Vector::Zero(width);
  long rows = 0;
  for (const auto* s : series) {
    if (s->cols() != width) throw Error(ErrorKind::kDimension, "scaler inputs have differing widths");
    sum += s->colwise().sum().transpose();
    rows += s->rows();
  }
  if (rows == 0) throw Error(ErrorKind::kInvalidArgument, "scaler needs data");
  Vector mean = sum / static_cast<double>(rows);
  Vector sq = Vector::Zero(width);
  for (const auto* s : series) {
    sq += (s->rowwise() - mean.transpose()).array().square().matrix().colwise().sum().transpose();
  }
  return Scaler(mean, (sq / static_cast<double>(rows)).cwiseSqrt());
}

Scaler Scaler::identity(int width) { return Scaler(Vector::Zero(width), Vector::Ones(width)); }

Series Scaler::transform(const Series& x) const {
  if (x.cols() != width()) throw Error(ErrorKind::kDimension, "scaler width mismatch");
  Series z = x;
  for (int c = 0; c < width(); ++c) z.col(c) = (x.col(c).array() - mean_[c]) / std_[c];
  return z;
}

Series Scaler::inverse(const Series& z) const {
  if (z.cols() != width()) throw Error(ErrorKind::kDimension, "scaler width mismatch");
  Series x = z;
  for (int c = 0; c < width(); ++c) x.col(c) = z.col(c).array() * std_[c] + mean_[c];
  return x;
}

Matrix window_features(const Series& series, int window) {
  if (window < 1) throw Error(ErrorKind::kInvalidArgument, "window must be >= 1");
  const int steps = static_cast<int>(series.rows()), d = static_cast<int>(series.cols());
  Matrix out = Matrix::Zero(steps, window * d);
  for (int t = 0; t < steps; ++t) {
    for (int j = 0; j < window; ++j) {
      int src = t - window + 1 + j;
      if (src < 0) continue;
      out.block(t, j * d, 1, d) = series.row(src);
    }
  }
  return out;
}

// ------------------------------------------------------------ regressors

RegressorHyper RegressorHyper::paper_scale() {
  RegressorHyper h;
  h.family = RegressorFamily::kMlpWindow;
  h.hidden = {32, 32};
  h.epochs = 1000;
  h.batch = 256;
  return h;
}

nlohmann::json RegressorHyper::to_json() const {
  return {{"family", family == RegressorFamily::kRidgeWindow ? "ridge-window" : "mlp-window"},
          {"window", window},
          {"lambda", lambda},
          {"hidden", hidden},
          {"epochs", epochs},
          {"batch", batch},
          {"learning_rate", learning_rate},
          {"seed", seed}};
}

RegressorHyper RegressorHyper::from_json(const nlohmann::json& j) {
  RegressorHyper h;
  try {
    std::string family = j.value("family", std::string("ridge-window"));
    if (family == "ridge-window") h.family = RegressorFamily::kRidgeWindow;
    else if (family == "mlp-window") h.family = RegressorFamily::kMlpWindow;
    else throw Error(ErrorKind::kInvalidConfig, "unknown regressor family '" + family + "'");
    h.window = j.value("window", h.window);
    h.lambda = j.value("lambda", h.lambda);
    h.hidden = j.value("hidden", h.hidden);
    h.epochs = j.value("epochs", h.epochs);
    h.batch = j.value("batch", h.batch);
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.seed = j.value("seed", h.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidConfig, std::string("bad hyperparameter document: ") + ex.what());
  }
  if (h.window < 1 || h.epochs < 1 || h.batch < 1 || !(h.lambda >= 0.0) || !(h.learning_rate > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "hyperparameters out of range");
  }
  for (int n : h.hidden)
    if (n < 1) throw Error(ErrorKind::kInvalidConfig, "hidden layer sizes must be positive");
  return h;
}

std::string RegressorHyper::fingerprint() const {
  if (family == RegressorFamily::kRidgeWindow) {
    return nlohmann::json{{"family", "ridge-window"}, {"window", window}, {"lambda", lambda}}.dump();
  }
  return to_json().dump();
}

Regressor::Regressor(const RegressorHyper& hyper, int in_dim, int out_dim)
    : hyper_(hyper), in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim < 1 || out_dim < 1) throw Error(ErrorKind::kDimension, "regressor widths must be positive");
  if (hyper_.family == RegressorFamily::kRidgeWindow) {
    coef_ = Matrix::Zero(in_dim, out_dim);
    intercept_ = Eigen::RowVectorXd::Zero(out_dim);
  } else {
    std::vector<int> sizes{in_dim};
    sizes.insert(sizes.end(), hyper_.hidden.begin(), hyper_.hidden.end());
    sizes.push_back(out_dim);
    net_ = Mlp(sizes);
  }
}

namespace {

void check_xy(const Regressor& r, const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw Error(ErrorKind::kDimension, "regressor X and Y row counts differ");
  if (x.cols() != r.in_dim() || y.cols() != r.out_dim()) {
    throw Error(ErrorKind::kDimension, "regressor data widths do not match the regressor");
  }
  if (x.rows() == 0) throw Error(ErrorKind::kInvalidArgument, "regressor needs at least one sample");
  if (!x.allFinite() || !y.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite regressor data");
}

}  // namespace

namespace {
std::atomic<std::uint64_t> g_fit_count{0};
}  // namespace

std::uint64_t regressor_fit_count() { return g_fit_count.load(); }

double Regressor::fit(const Matrix& x, const Matrix& y, std::uint64_t seed) {
  check_xy(*this, x, y);
  ++g_fit_count;
  if (hyper_.family == RegressorFamily::kRidgeWindow) {
    Eigen::RowVectorXd xm = x.colwise().mean(), ym = y.colwise().mean();
    Matrix xc = x.rowwise() - xm, yc = y.rowwise() - ym;
    if (hyper_.lambda > 0.0) {
      Matrix a(xc.rows() + in_dim_, in_dim_), b = Matrix::Zero(xc.rows() + in_dim_, out_dim_);
      a.topRows(xc.rows()) = xc;
      a.bottomRows(in_dim_) = std::sqrt(hyper_.lambda) * Matrix::Identity(in_dim_, in_dim_);
      b.topRows(xc.rows()) = yc;
      coef_ = Eigen::CompleteOrthogonalDecomposition<Matrix>(a).solve(b);
    } else {
      coef_ = Eigen::CompleteOrthogonalDecomposition<Matrix>(xc).solve(yc);
    }
    intercept_ = ym - xm * coef_;
    return (predict(x) - y).array().square().mean();
  }

  net_.init(seed);
  Adam adam;
  adam.learning_rate = hyper_.learning_rate;
  std::mt19937_64 rng(derive_seed(seed, {0x62617463ull}));
  const int n = static_cast<int>(x.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Vector grad(net_.num_params());
  Mlp::Tape tape;
  for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += hyper_.batch) {
      int b = std::min(hyper_.batch, n - start);
      Matrix xb(b, in_dim_), yb(b, out_dim_);
      for (int i = 0; i < b; ++i) {
        xb.row(i) = x.row(order[start + i]);
        yb.row(i) = y.row(order[start + i]);
      }
      Matrix out = net_.forward(xb, &tape);
      grad.setZero();
      net_.backward(tape, 2.0 * (out - yb) / static_cast<double>(b * out_dim_), grad);
      adam.step(net_.params(), grad);
    }
  }
  double loss = (predict(x) - y).array().square().mean();
  if (!std::isfinite(loss)) throw Error(ErrorKind::kNumeric, "regressor training diverged");
  return loss;
}

Matrix Regressor::predict(const Matrix& x) const {
  if (x.cols() != in_dim_) throw Error(ErrorKind::kDimension, "regressor input width mismatch");
  if (hyper_.family == RegressorFamily::kRidgeWindow) {
    Matrix out = x * coef_;
    out.rowwise() += intercept_;
    return out;
  }
  return net_.forward(x);
}

Vector Regressor::parameters() const {
  if (hyper_.family == RegressorFamily::kMlpWindow) return net_.params();
  Vector p(coef_.size() + intercept_.size());
  p.head(coef_.size()) = Eigen::Map<const Vector>(coef_.data(), coef_.size());
  p.tail(intercept_.size()) = intercept_.transpose();
  return p;
}

void Regressor::set_parameters(const Vector& p) {
  if (hyper_.family == RegressorFamily::kMlpWindow) {
    if (p.size() != net_.num_params()) throw Error(ErrorKind::kDimension, "parameter count mismatch");
    net_.params() = p;
    return;
  }
  if (p.size() != static_cast<long>(in_dim_) * out_dim_ + out_dim_) {
    throw Error(ErrorKind::kDimension, "parameter count mismatch");
  }
  coef_ = Eigen::Map<const Matrix>(p.data(), in_dim_, out_dim_);
  intercept_ = p.tail(out_dim_).transpose();
}

double Regressor::loss_and_gradient(const Matrix& x, const Matrix& y, Vector* grad) const {
  check_xy(*this, x, y);
  const double scale = 2.0 / static_cast<double>(x.rows() * out_dim_);
  if (hyper_.family == RegressorFamily::kRidgeWindow) {
    Matrix r = predict(x) - y;
    if (grad) {
      Matrix gc = scale * x.transpose() * r;
      Eigen::RowVectorXd gb = scale * r.colwise().sum();
      grad->resize(gc.size() + gb.size());
      grad->head(gc.size()) = Eigen::Map<const Vector>(gc.data(), gc.size());
      grad->tail(gb.size()) = gb.transpose();
    }
    return r.array().square().mean();
  }
  Mlp::Tape tape;
  Matrix out = net_.forward(x, &tape);
  Matrix r = out - y;
  if (grad) {
    *grad = Vector::Zero(net_.num_params());
    net_.backward(tape, scale * r, *grad);
  }
  return r.array().square().mean();
}

// ------------------------------------------------------------ calibration

namespace {

Series concat_scaled(const CalibratedModel& model, const std::vector<int>& ids,
                     const std::function<const Series&(int)>& raw) {
  int width = 0;
  for (int id : ids) width += model.nodes.at(id).width;
  const Series& first = raw(ids.front());
  Series out(first.rows(), width);
  int col = 0;
  for (int id : ids) {
    const Series& s = raw(id);
    if (s.rows() != first.rows()) throw Error(ErrorKind::kDimension, "input series lengths differ");
    out.middleCols(col, s.cols()) = model.scalers.at(id).transform(s);
    col += static_cast<int>(s.cols());
  }
  return out;
}

const Series& quantity(const CalibratedModel& model, const LoadingPath& path, int id) {
  const auto& info = model.nodes.at(id);
  auto it = path.quantities.find(info.name);
  if (it == path.quantities.end()) {
    throw Error(ErrorKind::kSchema, "path " + std::to_string(path.id) + " lacks quantity '" + info.name + "'");
  }
  if (it->second.cols() != info.width) {
    throw Error(ErrorKind::kSchema, "quantity '" + info.name + "' has the wrong width");
  }
  return it->second;
}

}  // namespace

CalibratedModel calibrate(const GameConfig& config, const ModelPlan& plan,
                          const std::vector<const LoadingPath*>& train, const RegressorHyper& hyper) {
  if (train.size() < 2) throw Error(ErrorKind::kInvalidArgument, "calibration needs at least 2 training paths");
  if (plan.groups.empty()) throw Error(ErrorKind::kInvalidArgument, "plan has no regressor groups");
  if (hyper.window != plan.window) {
    throw Error(ErrorKind::kInvalidArgument, "hyperparameter window differs from the plan window");
  }

  CalibratedModel model;
  model.plan = plan;
  model.hyper = hyper;
  model.root_id = config.root_id();
  model.leaf_id = config.leaf_id();
  for (const auto& g : plan.groups) {
    for (const auto* ids : {&g.inputs, &g.outputs}) {
      for (int id : *ids) model.nodes[id] = {config.node(id).name, config.node(id).width};
    }
  }
  for (const auto& [id, info] : model.nodes) {
    std::vector<const Series*> series;
    for (const auto* p : train) series.push_back(&quantity(model, *p, id));
    model.scalers[id] = Scaler::fit(series);
  }

  for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
    const auto& g = plan.groups[gi];
    std::vector<Matrix> xs, ys;
    long rows = 0;
    for (const auto* p : train) {
      auto raw = [&](int id) -> const Series& { return quantity(model, *p, id); };
      xs.push_back(window_features(concat_scaled(model, g.inputs, raw), plan.window));
      ys.push_back(concat_scaled(model, g.outputs, raw));
      rows += xs.back().rows();
    }
    Matrix x(rows, xs.front().cols()), y(rows, ys.front().cols());
    long r = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      x.middleRows(r, xs[i].rows()) = xs[i];
      y.middleRows(r, ys[i].rows()) = ys[i];
      r += xs[i].rows();
    }
    Regressor reg(hyper, static_cast<int>(x.cols()), static_cast<int>(y.cols()));
    model.train_losses.push_back(reg.fit(x, y, derive_seed(hyper.seed, {gi})));
    model.regressors.push_back(std::move(reg));
  }
  return model;
}

std::map<int, Series> predict_blind(const CalibratedModel& model, const Series& root_series) {
  if (root_series.rows() < 1) throw Error(ErrorKind::kInvalidArgument, "separation history is empty");
  if (model.regressors.size() != model.plan.groups.size()) {
    throw Error(ErrorKind::kInvalidArgument, "model is not calibrated");
  }
  if (root_series.cols() != model.nodes.at(model.root_id).width) {
    throw Error(ErrorKind::kDimension, "separation history has the wrong width");
  }
  std::map<int, Series> scaled;
  scaled[model.root_id] = model.scalers.at(model.root_id).transform(root_series);
  for (std::size_t gi = 0; gi < model.plan.groups.size(); ++gi) {
    const auto& g = model.plan.groups[gi];
    int width = 0;
    for (int id : g.inputs) width += model.nodes.at(id).width;
    Series in(root_series.rows(), width);
    int col = 0;
    for (int id : g.inputs) {
      auto it = scaled.find(id);
      if (it == scaled.end()) throw Error(ErrorKind::kInvalidArgument, "plan reads an unproduced node");
      in.middleCols(col, it->second.cols()) = it->second;
      col += static_cast<int>(it->second.cols());
    }
    Matrix out = model.regressors[gi].predict(window_features(in, model.plan.window));
    col = 0;
    for (int id : g.outputs) {
      int w = model.nodes.at(id).width;
      scaled[id] = out.middleCols(col, w);
      col += w;
    }
  }
  std::map<int, Series> physical;
  for (const auto& [id, s] : scaled) {
    if (id != model.root_id) physical[id] = model.scalers.at(id).inverse(s);
  }
  return physical;
}

std::vector<GroupResidual> predict_teacher_forced(const CalibratedModel& model, const LoadingPath& path) {
  if (path.steps() < 1) throw Error(ErrorKind::kInvalidArgument, "path is empty");
  std::vector<GroupResidual> out;
  auto raw = [&](int id) -> const Series& { return quantity(model, path, id); };
  for (std::size_t gi = 0; gi < model.plan.groups.size(); ++gi) {
    const auto& g = model.plan.groups[gi];
    Series in = concat_scaled(model, g.inputs, raw);
    Series target = concat_scaled(model, g.outputs, raw);
    Series pred = model.regressors[gi].predict(window_features(in, model.plan.window));
    GroupResidual res;
    res.outputs = g.outputs;
    res.mse = (target - pred).array().square().mean();
    res.predicted.resize(pred.rows(), pred.cols());
    res.residual.resize(pred.rows(), pred.cols());
    int col = 0;
    for (int id : g.outputs) {
      int w = model.nodes.at(id).width;
      const auto& sc = model.scalers.at(id);
      res.predicted.middleCols(col, w) = sc.inverse(pred.middleCols(col, w));
      res.residual.middleCols(col, w) = raw(id) - res.predicted.middleCols(col, w);
      col += w;
    }
    out.push_back(std::move(res));
  }
  return out;
}

// ---------------------------------------------------------- serialization

namespace {

constexpr char kModelMagic[8] = {'M', 'G', 'M', 'O', 'D', 'E', 'L', '1'};

nlohmann::json plan_to_json(const ModelPlan& plan) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : plan.groups) {
    groups.push_back({{"inputs", g.inputs}, {"outputs", g.outputs}, {"position", g.position}});
  }
  return {{"digraph", plan.digraph.to_hex()}, {"window", plan.window}, {"groups", groups}};
}

ModelPlan plan_from_json(const nlohmann::json& j) {
  ModelPlan plan;
  plan.digraph = EdgeBits::from_hex(j.at("digraph").get<std::string>());
  plan.window = j.at("window").get<int>();
  for (const auto& g : j.at("groups")) {
    plan.groups.push_back({g.at("inputs").get<std::vector<int>>(), g.at("outputs").get<std::vector<int>>(),
                           g.at("position").get<int>()});
  }
  return plan;
}

nlohmann::json header_json(const CalibratedModel& model) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [id, info] : model.nodes) nodes.push_back({{"id", id}, {"name", info.name}, {"width", info.width}});
  nlohmann::json regs = nlohmann::json::array();
  for (const auto& r : model.regressors) {
    regs.push_back({{"in", r.in_dim()}, {"out", r.out_dim()}, {"params", r.parameters().size()}});
  }
  return {{"format", "metagame-model"},
          {"version", kModelVersion},
          {"plan", plan_to_json(model.plan)},
          {"hyper", model.hyper.to_json()},
          {"root", model.root_id},
          {"leaf", model.leaf_id},
          {"nodes", nodes},
          {"regressors", regs}};
}

CalibratedModel skeleton_from_header(const nlohmann::json& h) {
  if (h.value("format", std::string()) != "metagame-model") {
    throw Error(ErrorKind::kSchema, "not a calibrated model document");
  }
  int version = h.at("version").get<int>();
  if (version > kModelVersion) {
    throw Error(ErrorKind::kVersion, "model version " + std::to_string(version) + " is newer than supported");
  }
  CalibratedModel m;
  m.plan = plan_from_json(h.at("plan"));
  m.hyper = RegressorHyper::from_json(h.at("hyper"));
  m.root_id = h.at("root").get<int>();
  m.leaf_id = h.at("leaf").get<int>();
  for (const auto& n : h.at("nodes")) {
    m.nodes[n.at("id").get<int>()] = {n.at("name").get<std::string>(), n.at("width").get<int>()};
  }
  for (const auto& r : h.at("regressors")) {
    m.regressors.emplace_back(m.hyper, r.at("in").get<int>(), r.at("out").get<int>());
  }
  if (m.regressors.size() != m.plan.groups.size()) {
    throw Error(ErrorKind::kSchema, "regressor count differs from group count");
  }
  return m;
}

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_doubles(std::string& out, const double* d, std::size_t n) {
  out.append(reinterpret_cast<const char*>(d), n * sizeof(double));
}

struct Reader {
  const std::string& s;
  std::size_t pos = 0;
  void raw(void* dst, std::size_t n) {
    if (pos + n > s.size()) throw Error(ErrorKind::kIo, "truncated model data");
    std::memcpy(dst, s.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  Vector doubles(std::size_t n) {
    Vector v(static_cast<long>(n));
    raw(v.data(), n * sizeof(double));
    return v;
  }
};

}  // namespace

std::string serialize_model(const CalibratedModel& model) {
  std::string out(kModelMagic, sizeof kModelMagic);
  std::string header = header_json(model).dump();
  put(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  for (const auto& [id, info] : model.nodes) {
    const auto& sc = model.scalers.at(id);
    put_doubles(out, sc.mean().data(), sc.mean().size());
    put_doubles(out, sc.stddev().data(), sc.stddev().size());
  }
  for (const auto& r : model.regressors) {
    Vector p = r.parameters();
    put_doubles(out, p.data(), p.size());
  }
  put(out, static_cast<std::uint64_t>(model.train_losses.size()));
  put_doubles(out, model.train_losses.data(), model.train_losses.size());
  return out;
}

CalibratedModel deserialize_model(const std::string& bytes) {
  if (bytes.size() < sizeof kModelMagic || std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0) {
    throw Error(ErrorKind::kIo, "not a binary calibrated model");
  }
  Reader rd{bytes, sizeof kModelMagic};
  auto len = rd.get<std::uint64_t>();
  if (len > bytes.size()) throw Error(ErrorKind::kIo, "corrupt model header");
  std::string header(len, '\0');
  rd.raw(header.data(), len);
  CalibratedModel m;
  try {
    m = skeleton_from_header(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("corrupt model header: ") + ex.what());
  }
  for (const auto& [id, info] : m.nodes) {
    Vector mean = rd.doubles(info.width);
    Vector sd = rd.doubles(info.width);
    m.scalers[id] = Scaler(mean, sd);
  }
  for (auto& r : m.regressors) r.set_parameters(rd.doubles(r.parameters().size()));
  auto n_losses = rd.get<std::uint64_t>();
  if (n_losses > m.regressors.size()) throw Error(ErrorKind::kIo, "corrupt model data");
  Vector losses = rd.doubles(n_losses);
  m.train_losses.assign(losses.data(), losses.data() + losses.size());
  if (rd.pos != bytes.size()) throw Error(ErrorKind::kIo, "trailing bytes after model data");
  return m;
}

nlohmann::json model_to_json(const CalibratedModel& model) {
  auto j = header_json(model);
  nlohmann::json scalers = nlohmann::json::object();
  for (const auto& [id, sc] : model.scalers) {
    scalers[std::to_string(id)] = {{"mean", std::vector<double>(sc.mean().data(), sc.mean().data() + sc.width())},
                                   {"std", std::vector<double>(sc.stddev().data(), sc.stddev().data() + sc.width())}};
  }
  j["scalers"] = scalers;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& r : model.regressors) {
    Vector p = r.parameters();
    params.push_back(std::vector<double>(p.data(), p.data() + p.size()));
  }
  j["parameters"] = params;
  j["train_losses"] = model.train_losses;
  return j;
}

CalibratedModel model_from_json(const nlohmann::json& j) {
  try {
    CalibratedModel m = skeleton_from_header(j);
    for (const auto& [id, info] : m.nodes) {
      const auto& s = j.at("scalers").at(std::to_string(id));
      auto mean = s.at("mean").get<std::vector<double>>();
      auto sd = s.at("std").get<std::vector<double>>();
      if (static_cast<int>(mean.size()) != info.width || sd.size() != mean.size()) {
        throw Error(ErrorKind::kSchema, "scaler width mismatch for '" + info.name + "'");
      }
      m.scalers[id] = Scaler(Eigen::Map<Vector>(mean.data(), info.width), Eigen::Map<Vector>(sd.data(), info.width));
    }
    const auto& params = j.at("parameters");
    for (std::size_t i = 0; i < m.regressors.size(); ++i) {
      auto p = params.at(i).get<std::vector<double>>();
      m.regressors[i].set_parameters(Eigen::Map<Vector>(p.data(), static_cast<long>(p.size())));
    }
    m.train_losses = j.value("train_losses", std::vector<double>{});
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kSchema, std::string("bad model document: ") + ex.what());
  }
}

void save_model(const CalibratedModel& model, const std::string& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + file + "'");
  std::string bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + file + "'");
}

CalibratedModel load_model(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + file + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();
  if (!bytes.empty() && bytes.front() == '{') {
    try {
      return model_from_json(nlohmann::json::parse(bytes));
    } catch (const nlohmann::json::parse_error& ex) {
      throw Error(ErrorKind::kIo, std::string("corrupt model file: ") + ex.what());
    }
  }
  return deserialize_model(bytes);
}

}  // namespace metagame
