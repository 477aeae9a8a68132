#include "l2d/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace l2d::nn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tape

Tape::Var Tape::push(Matrix value, std::function<void()> back) {
  nodes_.push_back({std::move(value), Matrix(), std::move(back)});
  return size() - 1;
}

Tape::Var Tape::leaf(Matrix value) { return push(std::move(value), nullptr); }

Tape::Var Tape::matmul(Var a, Var b, bool rowwise_exact) {
  if (value(a).cols() != value(b).rows()) throw DataError("matmul: shape mismatch");
  const Var out = size();
  // The blocked product may round a row differently depending on where it
  // sits in the matrix; the coefficient-wise one does not.
  Matrix v = rowwise_exact ? Matrix(value(a).lazyProduct(value(b))) : Matrix(value(a) * value(b));
  return push(std::move(v), [this, a, b, out] {
    const Matrix& g = nodes_[out].grad;
    nodes_[a].grad.noalias() += g * nodes_[b].value.transpose();
    nodes_[b].grad.noalias() += nodes_[a].value.transpose() * g;
  });
}

Tape::Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DataError("add: shape mismatch");
  const Var out = size();
  return push(value(a) + value(b), [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[b].grad += nodes_[out].grad;
  });
}

Tape::Var Tape::add_bias(Var a, Var bias) {
  if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols())
    throw DataError("add_bias: shape mismatch");
  const Var out = size();
  Matrix v = value(a).rowwise() + value(bias).row(0);
  return push(std::move(v), [this, a, bias, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[bias].grad += nodes_[out].grad.colwise().sum();
  });
}

namespace {

// Neighbour contributions are summed in ascending order of value, so the
// result depends only on the multiset of terms, not on bus numbering.
Matrix apply_shift(const Matrix& S, const Matrix& a) {
  const Eigen::Index n = S.rows();
  if (n == 0 || a.rows() % n != 0) throw DataError("shift: shape mismatch");
  std::vector<std::vector<std::pair<Eigen::Index, double>>> nbr(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (S(i, j) != 0.0) nbr[i].emplace_back(j, S(i, j));
  Matrix out(a.rows(), a.cols());
  std::vector<double> terms;
  for (Eigen::Index f = 0; f < a.cols(); ++f)
    for (Eigen::Index base = 0; base < a.rows(); base += n)
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = nbr[i];
        double sum = 0.0;
        if (row.size() <= 2) {
          // Two-term addition commutes exactly.
          for (const auto& [j, s] : row) sum += s * a(base + j, f);
        } else {
          terms.clear();
          for (const auto& [j, s] : row) {
            const double t = s * a(base + j, f);
            auto k = terms.size();
            terms.push_back(t);
            for (; k > 0 && terms[k - 1] > t; --k) terms[k] = terms[k - 1];
            terms[k] = t;
          }
          for (double t : terms) sum += t;
        }
        out(base + i, f) = sum;
      }
  return out;
}

}  // namespace

Tape::Var Tape::shift(const Matrix& S, Var a) {
  const Var out = size();
  Matrix v = apply_shift(S, value(a));
  const Matrix St = S.transpose();
  return push(std::move(v), [this, St, a, out] {
    const Matrix& g = nodes_[out].grad;
    const Eigen::Index n = St.rows();
    for (Eigen::Index base = 0; base < g.rows(); base += n)
      nodes_[a].grad.middleRows(base, n).noalias() += St * g.middleRows(base, n);
  });
}

Tape::Var Tape::relu(Var a) {
  const Var out = size();
  return push(value(a).cwiseMax(0.0), [this, a, out] {
    nodes_[a].grad.array() += nodes_[out].grad.array() * (nodes_[a].value.array() > 0.0).cast<double>();
  });
}

Tape::Var Tape::tanh(Var a) {
  const Var out = size();
  Matrix v = value(a).array().tanh().matrix();
  return push(std::move(v), [this, a, out] {
    const auto& y = nodes_[out].value.array();
    nodes_[a].grad.array() += nodes_[out].grad.array() * (1.0 - y * y);
  });
}

Tape::Var Tape::dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  const Matrix& x = value(a);
  Matrix keep(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < keep.cols(); ++c)
    for (Eigen::Index r = 0; r < keep.rows(); ++r) keep(r, c) = rng.uniform() >= p ? scale : 0.0;
  const Var out = size();
  Matrix v = x.cwiseProduct(keep);
  return push(std::move(v), [this, a, out, keep] {
    nodes_[a].grad += nodes_[out].grad.cwiseProduct(keep);
  });
}

Tape::Var Tape::masked_mse(Var pred, const Matrix& target, const BoolMatrix& mask) {
  const Matrix& p = value(pred);
  if (p.rows() != target.rows() || p.cols() != target.cols() || p.rows() != mask.rows() ||
      p.cols() != mask.cols())
    throw DataError("masked loss: shape mismatch");
  const auto count = mask.count();
  if (count == 0) throw DataError("masked loss: mask selects no entries");
  Matrix diff = Matrix::Zero(p.rows(), p.cols());
  for (Eigen::Index c = 0; c < p.cols(); ++c)
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      if (mask(r, c)) diff(r, c) = p(r, c) - target(r, c);
  Matrix v(1, 1);
  v(0, 0) = diff.squaredNorm() / static_cast<double>(count);
  const Var out = size();
  return push(std::move(v), [this, pred, out, diff, count] {
    nodes_[pred].grad += diff * (2.0 * nodes_[out].grad(0, 0) / static_cast<double>(count));
  });
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw DataError("backward: loss must be a scalar");
  for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_[loss].grad(0, 0) = 1.0;
  for (Var k = loss; k >= 0; --k)
    if (nodes_[k].back) nodes_[k].back();
}

// ---------------------------------------------------------------------------
// Models

const char* to_string(Family f) noexcept { return f == Family::fcnn ? "fcnn" : "gnn"; }

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Family parse_family(const std::string& text) {
  if (text == "fcnn") return Family::fcnn;
  if (text == "gnn") return Family::gnn;
  throw ConfigError("unknown model family '" + text + "'");
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  if (text == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + text + "'");
}

void ModelConfig::validate() const {
  for (int w : widths)
    if (w < 1) throw ConfigError("layer widths must be positive");
  if (family == Family::gnn && widths.empty()) throw ConfigError("gnn needs at least one graph layer");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (taps < 1) throw ConfigError("filter taps must be at least 1");
}

Matrix build_shift_operator(const Grid& grid) {
  const int n = grid.bus_count();
  Matrix A = Matrix::Zero(n, n);
  for (const auto& l : grid.lines) {
    const double w = std::abs(l.y_series);
    A(l.from_bus, l.to_bus) += w;
    A(l.to_bus, l.from_bus) += w;
  }
  const Vector d = A.rowwise().sum();
  Matrix S = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (A(i, j) != 0.0) S(i, j) = A(i, j) / std::sqrt(d(i) * d(j));
  return S;
}

namespace {

struct Shape {
  std::string name;
  Eigen::Index rows, cols;
  double bound;
};

std::vector<Shape> param_shapes(const ModelConfig& c, int buses) {
  std::vector<Shape> out;
  if (c.family == Family::fcnn) {
    Eigen::Index in = kInputColumns * buses;
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      const auto id = std::to_string(l);
      out.push_back({"dense" + id + ".W", in, c.widths[l], bound});
      out.push_back({"dense" + id + ".b", 1, c.widths[l], bound});
      in = c.widths[l];
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    out.push_back({"out.W", in, kControlColumns * buses, bound});
    out.push_back({"out.b", 1, kControlColumns * buses, bound});
  } else {
    Eigen::Index in = kInputColumns;
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in * c.taps));
      const auto id = std::to_string(l);
      for (int k = 0; k < c.taps; ++k)
        out.push_back({"graph" + id + ".W" + std::to_string(k), in, c.widths[l], bound});
      out.push_back({"graph" + id + ".b", 1, c.widths[l], bound});
      in = c.widths[l];
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    out.push_back({"head.W", in, kControlColumns, bound});
    out.push_back({"head.b", 1, kControlColumns, bound});
  }
  return out;
}

Tape::Var activate(Tape& t, Tape::Var h, Activation a) {
  switch (a) {
    case Activation::relu: return t.relu(h);
    case Activation::tanh: return t.tanh(h);
    case Activation::identity: break;
  }
  return h;
}

}  // namespace

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> names;
  for (const auto& s : param_shapes(config, buses)) names.push_back(s.name);
  return names;
}

long Model::param_count() const {
  long n = 0;
  for (const auto& p : params) n += static_cast<long>(p.size());
  return n;
}

Model make_model(const ModelConfig& config, const Grid& grid, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.buses = grid.bus_count();
  m.seed = seed;
  if (config.family == Family::gnn) m.shift = build_shift_operator(grid);
  Rng rng(seed);
  for (const auto& s : param_shapes(config, m.buses)) {
    Matrix p(s.rows, s.cols);
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, c) = rng.uniform(-s.bound, s.bound);
    m.params.push_back(std::move(p));
  }
  m.input_mean = Matrix::Zero(m.buses, kInputColumns);
  m.input_std = Matrix::Ones(m.buses, kInputColumns);
  return m;
}

Matrix pack_inputs(const Model& model, const std::vector<const InputVector*>& xs) {
  const int n = model.buses;
  const auto b = static_cast<Eigen::Index>(xs.size());
  const bool fcnn = model.config.family == Family::fcnn;
  Matrix out = fcnn ? Matrix(b, kInputColumns * n) : Matrix(b * n, kInputColumns);
  for (Eigen::Index r = 0; r < b; ++r) {
    const Matrix& x = xs[r]->values;
    if (x.rows() != n || x.cols() != kInputColumns) throw DataError("input shape does not match the model");
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < kInputColumns; ++c) {
        const double z = (x(i, c) - model.input_mean(i, c)) / model.input_std(i, c);
        if (fcnn) out(r, i * kInputColumns + c) = z;
        else out(r * n + i, c) = z;
      }
  }
  return out;
}

Batch make_batch(const Model& model, const std::vector<const LabeledRow*>& rows) {
  const int n = model.buses;
  const auto b = static_cast<Eigen::Index>(rows.size());
  const bool fcnn = model.config.family == Family::fcnn;
  std::vector<const InputVector*> xs;
  for (const auto* r : rows) xs.push_back(&r->x);
  Batch batch;
  batch.inputs = pack_inputs(model, xs);
  batch.targets = fcnn ? Matrix::Zero(b, kControlColumns * n) : Matrix::Zero(b * n, kControlColumns);
  batch.mask = BoolMatrix::Constant(batch.targets.rows(), batch.targets.cols(), false);
  for (Eigen::Index r = 0; r < b; ++r) {
    const auto& y = rows[r]->y_star;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < kControlColumns; ++c) {
        if (!rows[r]->converged || !y.mask(i, c)) continue;
        const double z = (y.values(i, c) - model.norm.mean[c]) / model.norm.stddev[c];
        const Eigen::Index row = fcnn ? r : r * n + i, col = fcnn ? i * kControlColumns + c : c;
        batch.targets(row, col) = z;
        batch.mask(row, col) = true;
      }
  }
  return batch;
}

Tape::Var build_forward(const Model& model, Tape& tape, const Matrix& inputs, bool train, Rng* rng,
                        std::vector<Tape::Var>& param_vars) {
  const auto& c = model.config;
  param_vars.clear();
  for (const auto& p : model.params) param_vars.push_back(tape.leaf(p));
  const bool drop = train && c.dropout > 0.0 && rng != nullptr;
  Tape::Var h = tape.leaf(inputs);
  std::size_t k = 0;
  if (c.family == Family::fcnn) {
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
      h = tape.add_bias(tape.matmul(h, param_vars[k]), param_vars[k + 1]);
      k += 2;
      h = activate(tape, h, c.activation);
      if (drop) h = tape.dropout(h, c.dropout, *rng);
    }
  } else {
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
      Tape::Var power = h;
      Tape::Var acc = tape.matmul(power, param_vars[k++], true);
      for (int tap = 1; tap < c.taps; ++tap) {
        power = tape.shift(model.shift, power);
        acc = tape.add(acc, tape.matmul(power, param_vars[k++], true));
      }
      h = tape.add_bias(acc, param_vars[k++]);
      h = activate(tape, h, c.activation);
      if (drop) h = tape.dropout(h, c.dropout, *rng);
    }
  }
  const bool exact = c.family == Family::gnn;
  return tape.add_bias(tape.matmul(h, param_vars[k], exact), param_vars[k + 1]);
}

std::vector<Matrix> forward_many(const Model& model, const std::vector<const InputVector*>& xs) {
  Tape tape;
  std::vector<Tape::Var> vars;
  const Matrix out = tape.value(build_forward(model, tape, pack_inputs(model, xs), false, nullptr, vars));
  const int n = model.buses;
  std::vector<Matrix> result;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    Matrix y(n, kControlColumns);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < kControlColumns; ++c)
        y(i, c) = model.config.family == Family::fcnn ? out(r, i * kControlColumns + c)
                                                      : out(r * n + i, c);
    result.push_back(std::move(y));
  }
  return result;
}

Matrix forward(const Model& model, const InputVector& x) { return forward_many(model, {&x}).front(); }

ControlVector predict(const Model& model, const Grid& grid, const InputVector& x) {
  const Matrix z = forward(model, x);
  ControlVector y = ControlVector::zeros(grid);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (int c = 0; c < kControlColumns; ++c)
      if (y.mask(i, c)) y.values(i, c) = z(i, c) * model.norm.stddev[c] + model.norm.mean[c];
  return y;
}

LossAndGrad loss_and_gradient(const Model& model, const Batch& batch, bool train,
                              std::uint64_t dropout_seed) {
  Tape tape;
  Rng rng(dropout_seed);
  std::vector<Tape::Var> vars;
  const auto out = build_forward(model, tape, batch.inputs, train, &rng, vars);
  const auto loss = tape.masked_mse(out, batch.targets, batch.mask);
  tape.backward(loss);
  LossAndGrad r;
  r.loss = tape.value(loss)(0, 0);
  for (auto v : vars) r.grads.push_back(tape.grad(v));
  return r;
}

double evaluate_loss(const Model& model, const std::vector<const LabeledRow*>& rows) {
  const Batch b = make_batch(model, rows);
  Tape tape;
  std::vector<Tape::Var> vars;
  const auto out = build_forward(model, tape, b.inputs, false, nullptr, vars);
  return tape.value(tape.masked_mse(out, b.targets, b.mask))(0, 0);
}

void fit_normalization(Model& model, const LabeledDataset& data) {
  const auto rows = data.select(SplitTag::train);
  if (rows.empty()) throw ConfigError("no training rows");
  const int n = model.buses;
  const auto count = static_cast<double>(rows.size());
  Matrix mean = Matrix::Zero(n, kInputColumns), sq = Matrix::Zero(n, kInputColumns);
  if (model.config.family == Family::fcnn) {
    for (const auto* r : rows) mean += r->x.values;
    mean /= count;
    for (const auto* r : rows) sq += (r->x.values - mean).cwiseAbs2();
    sq /= count;
  } else {
    const double total = count * n;
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(kInputColumns), s = m;
    for (const auto* r : rows) m += r->x.values.colwise().sum();
    m /= total;
    for (const auto* r : rows) s += (r->x.values.rowwise() - m).cwiseAbs2().colwise().sum();
    s /= total;
    mean = m.replicate(n, 1);
    sq = s.replicate(n, 1);
  }
  Matrix sd = sq.cwiseSqrt();
  for (Eigen::Index k = 0; k < sd.size(); ++k)
    if (!(sd(k) > 1e-12)) sd(k) = 1.0;
  model.input_mean = mean;
  model.input_std = sd;
  model.norm = data.norm;
}

// ---------------------------------------------------------------------------
// Training

TrainReport train(Model& model, const LabeledDataset& data, const TrainOptions& options) {
  if (options.batch_size < 1) throw ConfigError("batch size must be positive");
  if (options.learning_rate < 0 || options.weight_decay < 0) throw ConfigError("negative step size or decay");
  const auto train_rows = data.select(SplitTag::train);
  const auto val_rows = data.select(SplitTag::val);
  if (train_rows.empty() || val_rows.empty()) throw ConfigError("training needs train and val rows");
  fit_normalization(model, data);

  TrainReport report;
  report.options = options;
  report.config = model.config;
  Rng rng(options.seed);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<Matrix> m1, m2;
  for (const auto& p : model.params) {
    m1.push_back(Matrix::Zero(p.rows(), p.cols()));
    m2.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  report.train_loss.push_back(evaluate_loss(model, train_rows));
  report.val_loss.push_back(evaluate_loss(model, val_rows));
  report.best_val = report.val_loss.back();
  std::vector<Matrix> best = model.params;
  if (!std::isfinite(report.best_val)) {
    report.diverged = true;
    report.note = "validation loss not finite at epoch 0";
    return report;
  }

  std::vector<std::size_t> order(train_rows.size());
  long step = 0;
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const LabeledRow*> rows;
      for (std::size_t k = start; k < end; ++k) rows.push_back(train_rows[order[k]]);
      const Batch batch = make_batch(model, rows);
      if (batch.mask.count() == 0) continue;
      const auto lg = loss_and_gradient(model, batch, true, rng.next());
      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t p = 0; p < model.params.size(); ++p) {
        m1[p] = b1 * m1[p] + (1 - b1) * lg.grads[p];
        m2[p] = b2 * m2[p] + (1 - b2) * lg.grads[p].cwiseAbs2();
        const Matrix update =
            ((m1[p] / c1).array() / ((m2[p] / c2).array().sqrt() + eps)).matrix();
        model.params[p] -= options.learning_rate * (update + options.weight_decay * model.params[p]);
      }
    }
    report.train_loss.push_back(evaluate_loss(model, train_rows));
    report.val_loss.push_back(evaluate_loss(model, val_rows));
    report.stop_epoch = epoch;
    const double val = report.val_loss.back();
    if (!std::isfinite(val)) {
      report.diverged = true;
      report.note = "validation loss not finite at epoch " + std::to_string(epoch);
      break;
    }
    if (val < report.best_val) {
      report.best_val = val;
      report.best_epoch = epoch;
      best = model.params;
    } else if (epoch - report.best_epoch >= options.patience) {
      break;
    }
  }
  model.params = best;
  return report;
}

HyperSpace HyperSpace::single(const ModelConfig& config, const TrainOptions& options) {
  HyperSpace s;
  s.widths = {config.widths};
  s.activations = {config.activation};
  s.dropout = {config.dropout};
  s.taps = {config.taps};
  s.learning_rate = {options.learning_rate};
  s.weight_decay = {options.weight_decay};
  s.batch_size = {options.batch_size};
  return s;
}

namespace {

template <class T>
T draw(Rng& rng, const std::vector<T>& choices, const T& fallback) {
  if (choices.empty()) return fallback;
  return choices[rng.below(choices.size())];
}

}  // namespace

SearchResult hyper_search(const Grid& grid, const LabeledDataset& data, const HyperSpace& space,
                          const ModelConfig& base_config, const TrainOptions& base_options,
                          int budget, std::uint64_t seed) {
  if (budget < 1) throw ConfigError("search budget must be at least 1");
  Rng rng(seed);
  SearchResult result;
  for (int t = 0; t < budget; ++t) {
    Trial trial;
    trial.config = base_config;
    trial.options = base_options;
    trial.config.widths = draw(rng, space.widths, base_config.widths);
    trial.config.activation = draw(rng, space.activations, base_config.activation);
    trial.config.dropout = draw(rng, space.dropout, base_config.dropout);
    trial.config.taps = draw(rng, space.taps, base_config.taps);
    trial.options.learning_rate = draw(rng, space.learning_rate, base_options.learning_rate);
    trial.options.weight_decay = draw(rng, space.weight_decay, base_options.weight_decay);
    trial.options.batch_size = draw(rng, space.batch_size, base_options.batch_size);
    const std::uint64_t trial_seed = rng.next();
    trial.options.seed = trial_seed;
    Model model = make_model(trial.config, grid, trial_seed);
    const auto report = train(model, data, trial.options);
    trial.best_val = report.diverged && !std::isfinite(report.best_val)
                         ? std::numeric_limits<double>::infinity()
                         : report.best_val;
    trial.best_epoch = report.best_epoch;
    if (result.trials.empty() || trial.best_val < result.best.best_val) result.best = trial;
    result.trials.push_back(trial);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json matrix_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("checkpoint: matrix size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"family", to_string(c.family)},
          {"widths", c.widths},
          {"activation", to_string(c.activation)},
          {"dropout", c.dropout},
          {"taps", c.taps}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
  if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<int>>();
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("taps")) c.taps = j.at("taps").get<int>();
  c.validate();
  return c;
}

json to_json(const TrainOptions& o) {
  return {{"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay},
          {"batch_size", o.batch_size},       {"patience", o.patience},
          {"max_epochs", o.max_epochs},       {"seed", o.seed}};
}

TrainOptions train_options_from_json(const json& j) {
  TrainOptions o;
  if (j.contains("learning_rate")) o.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("weight_decay")) o.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("batch_size")) o.batch_size = j.at("batch_size").get<int>();
  if (j.contains("patience")) o.patience = j.at("patience").get<int>();
  if (j.contains("max_epochs")) o.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  return o;
}

json to_json(const TrainReport& r) {
  return {{"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"best_epoch", r.best_epoch},
          {"stop_epoch", r.stop_epoch}, {"best_val", r.best_val},  {"diverged", r.diverged},
          {"note", r.note},             {"options", to_json(r.options)},
          {"config", to_json(r.config)}};
}

json to_json(const HyperSpace& s) {
  std::vector<std::string> acts;
  for (auto a : s.activations) acts.push_back(to_string(a));
  return {{"widths", s.widths},           {"activations", acts},
          {"dropout", s.dropout},         {"taps", s.taps},
          {"learning_rate", s.learning_rate}, {"weight_decay", s.weight_decay},
          {"batch_size", s.batch_size}};
}

HyperSpace hyper_space_from_json(const json& j) {
  HyperSpace s;
  if (j.contains("widths")) s.widths = j.at("widths").get<std::vector<std::vector<int>>>();
  if (j.contains("activations"))
    for (const auto& a : j.at("activations")) s.activations.push_back(parse_activation(a.get<std::string>()));
  if (j.contains("dropout")) s.dropout = j.at("dropout").get<std::vector<double>>();
  if (j.contains("taps")) s.taps = j.at("taps").get<std::vector<int>>();
  if (j.contains("learning_rate")) s.learning_rate = j.at("learning_rate").get<std::vector<double>>();
  if (j.contains("weight_decay")) s.weight_decay = j.at("weight_decay").get<std::vector<double>>();
  if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<std::vector<int>>();
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const json& manifest) {
  json params = json::array();
  const auto names = model.param_names();
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    json p = matrix_json(model.params[k]);
    p["name"] = names[k];
    params.push_back(p);
  }
  json j = {{"format", "l2d-model"},
            {"version", 1},
            {"config", to_json(model.config)},
            {"buses", model.buses},
            {"seed", model.seed},
            {"norm",
             {{"mean", model.norm.mean}, {"stddev", model.norm.stddev}, {"train_rows", model.norm.train_rows}}},
            {"input_mean", matrix_json(model.input_mean)},
            {"input_std", matrix_json(model.input_std)},
            {"params", params},
            {"manifest", manifest}};
  if (model.config.family == Family::gnn) j["shift"] = matrix_json(model.shift);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "l2d-model") throw DataError(path.string() + ": not a model checkpoint");
  try {
    Model m;
    m.config = model_config_from_json(j.at("config"));
    m.buses = j.at("buses").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& norm = j.at("norm");
    m.norm.mean = norm.at("mean").get<std::array<double, kControlColumns>>();
    m.norm.stddev = norm.at("stddev").get<std::array<double, kControlColumns>>();
    m.norm.train_rows = norm.at("train_rows").get<int>();
    m.input_mean = matrix_from(j.at("input_mean"));
    m.input_std = matrix_from(j.at("input_std"));
    if (m.config.family == Family::gnn) m.shift = matrix_from(j.at("shift"));
    const auto shapes = param_shapes(m.config, m.buses);
    const auto& params = j.at("params");
    if (params.size() != shapes.size()) throw DataError("parameter count does not match config");
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      Matrix p = matrix_from(params[k]);
      if (p.rows() != shapes[k].rows || p.cols() != shapes[k].cols)
        throw DataError("parameter " + shapes[k].name + " has the wrong shape");
      m.params.push_back(std::move(p));
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace l2d::nn
