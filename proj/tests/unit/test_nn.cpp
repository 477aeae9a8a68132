#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "../support/nn_checks.hpp"
#include "../support/random_grid.hpp"
#include "l2d/nn.hpp"

using namespace l2d;
using namespace l2d::nn;
using testing::numeric_gradient;
using testing::permutation_matrix;
using testing::relative_error;

namespace {

Grid path_grid(int n) {
  Grid g;
  g.base_mva = 100.0;
  for (int i = 0; i < n; ++i) g.buses.push_back({i, "b" + std::to_string(i), 100.0, 0.9, 1.1});
  for (int i = 0; i + 1 < n; ++i) {
    Line l;
    l.from_bus = i;
    l.to_bus = i + 1;
    l.y_series = Complex(0.0, -10.0);
    g.lines.push_back(l);
  }
  return g;
}

// Small labelled set on the 14-bus fixture; targets come from the oracle.
const LabeledDataset& small_dataset() {
  static const LabeledDataset data = [] {
    const Grid g = load_grid(testing::fixture("small14.json"));
    const auto nominal = read_inputs(testing::fixture("small14_nominal.csv"), g).at(0);
    LabeledDataset d = label_dataset(g, sample_synthetic(nominal, 30, 0.3, 11));
    split(d, SplitScheme::random, {0.6, 0.2, 0.2}, 1);
    return d;
  }();
  return data;
}

void check_gradients(const ModelConfig& config, bool train) {
  const Grid g = load_grid(testing::fixture("small14.json"));
  const auto& data = small_dataset();
  Model m = make_model(config, g, 5);
  fit_normalization(m, data);
  std::vector<const LabeledRow*> rows;
  for (int k = 0; k < 4; ++k) rows.push_back(&data.rows[k]);
  const Batch batch = make_batch(m, rows);
  const auto analytic = loss_and_gradient(m, batch, train, 77);
  const auto numeric = numeric_gradient(m, batch, train, 77);
  const auto names = m.param_names();
  for (std::size_t p = 0; p < numeric.size(); ++p) {
    CAPTURE(names[p]);
    CHECK(relative_error(analytic.grads[p], numeric[p]) <= 1e-5);
  }
}

}  // namespace

TEST_CASE("shift operator") {
  const Matrix two = build_shift_operator(load_grid(testing::fixture("two_bus.json")));
  Matrix expected(2, 2);
  expected << 0, 1, 1, 0;
  CHECK(two == expected);

  const Matrix S = build_shift_operator(load_grid(testing::fixture("uruguay107.json")));
  CHECK(S == S.transpose());
  CHECK(S.diagonal().isZero(0.0));

  const Matrix path = build_shift_operator(path_grid(3));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(path);
  CHECK(eig.eigenvalues().minCoeff() >= -1 - 1e-12);
  CHECK(eig.eigenvalues().maxCoeff() <= 1 + 1e-12);
  // Path of three equal edges: eigenvalues -1, 0, 1.
  CHECK(eig.eigenvalues()(0) == doctest::Approx(-1.0));
  CHECK(eig.eigenvalues()(2) == doctest::Approx(1.0));

  Grid isolated = path_grid(3);
  isolated.buses.push_back({3, "lonely", 100.0, 0.9, 1.1});
  const Matrix Si = build_shift_operator(isolated);
  CHECK(Si.row(3).isZero(0.0));
  CHECK(Si.col(3).isZero(0.0));
}

TEST_CASE("zero parameters give zero output") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  Rng rng(1);
  const auto x = testing::random_input(g, rng);
  for (auto family : {Family::fcnn, Family::gnn}) {
    ModelConfig c;
    c.family = family;
    c.widths = {8, 8};
    Model m = make_model(c, g, 3);
    for (auto& p : m.params) p.setZero();
    CHECK(forward(m, x).isZero(0.0));
  }
}

TEST_CASE("single linear layer matches a naive product") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  ModelConfig c;
  c.widths = {};
  c.activation = Activation::identity;
  const Model m = make_model(c, g, 9);
  Rng rng(2);
  const auto x = testing::random_input(g, rng);
  const Matrix out = forward(m, x);
  const int n = g.bus_count();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kControlColumns; ++k) {
      const int col = i * kControlColumns + k;
      double s = m.params[1](0, col);
      for (int j = 0; j < n; ++j)
        for (int q = 0; q < kInputColumns; ++q) s += x.values(j, q) * m.params[0](j * kInputColumns + q, col);
      CHECK(out(i, k) == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("masked loss") {
  Tape t;
  Matrix y(2, 2);
  y << 1, 2, 3, 4;
  BoolMatrix all = BoolMatrix::Constant(2, 2, true);
  CHECK(t.value(t.masked_mse(t.leaf(y), y, all))(0, 0) == 0.0);

  Matrix target = y;
  target(1, 0) = 5.0;
  target(0, 1) = 100.0;  // masked out
  BoolMatrix mask = BoolMatrix::Constant(2, 2, false);
  mask(1, 0) = true;
  Tape t2;
  const auto p = t2.leaf(y);
  const auto loss = t2.masked_mse(p, target, mask);
  CHECK(t2.value(loss)(0, 0) == 4.0);
  t2.backward(loss);
  CHECK(t2.grad(p)(0, 1) == 0.0);
  CHECK(t2.grad(p)(0, 0) == 0.0);
  CHECK(t2.grad(p)(1, 0) == -4.0);

  Tape t3;
  CHECK_THROWS_AS(t3.masked_mse(t3.leaf(y), y, BoolMatrix::Constant(2, 2, false)), DataError);
}

TEST_CASE("linear model gradient equals the closed form") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  const auto& data = small_dataset();
  ModelConfig c;
  c.widths = {};
  c.activation = Activation::identity;
  Model m = make_model(c, g, 4);
  fit_normalization(m, data);
  const auto rows = data.select(SplitTag::train);
  const Batch b = make_batch(m, rows);
  const auto lg = loss_and_gradient(m, b);
  const Matrix X = b.inputs;
  Matrix R = ((X * m.params[0]).rowwise() + m.params[1].row(0)) - b.targets;
  for (Eigen::Index k = 0; k < R.size(); ++k)
    if (!b.mask(k)) R(k) = 0.0;
  const double cnt = static_cast<double>(b.mask.count());
  const Matrix gW = 2.0 / cnt * X.transpose() * R;
  const Matrix gb = 2.0 / cnt * R.colwise().sum();
  CHECK(relative_error(lg.grads[0], gW) <= 1e-12);
  CHECK(relative_error(lg.grads[1], gb) <= 1e-12);
  CHECK(lg.loss == doctest::Approx(R.squaredNorm() / cnt).epsilon(1e-12));
}

TEST_CASE("zero loss gives zero gradients") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  const auto& data = small_dataset();
  ModelConfig c;
  c.family = Family::gnn;
  c.widths = {6};
  Model m = make_model(c, g, 8);
  fit_normalization(m, data);
  std::vector<const LabeledRow*> rows{&data.rows[0], &data.rows[1]};
  Batch b = make_batch(m, rows);
  Tape t;
  std::vector<Tape::Var> vars;
  b.targets = t.value(build_forward(m, t, b.inputs, false, nullptr, vars));
  const auto lg = loss_and_gradient(m, b);
  CHECK(lg.loss == 0.0);
  for (const auto& gr : lg.grads) CHECK(gr.isZero(0.0));
}

TEST_CASE("finite-difference gradient checks for every layer type") {
  ModelConfig dense;
  dense.widths = {7, 5};
  SUBCASE("dense + tanh") {
    dense.activation = Activation::tanh;
    check_gradients(dense, false);
  }
  SUBCASE("dense + relu") {
    dense.activation = Activation::relu;
    check_gradients(dense, false);
  }
  SUBCASE("dense + identity") {
    dense.activation = Activation::identity;
    check_gradients(dense, false);
  }
  SUBCASE("dropout, eval mode") {
    dense.activation = Activation::tanh;
    dense.dropout = 0.3;
    check_gradients(dense, false);
  }
  SUBCASE("dropout, train mode with a fixed mask") {
    dense.activation = Activation::tanh;
    dense.dropout = 0.3;
    check_gradients(dense, true);
  }
  ModelConfig graph;
  graph.family = Family::gnn;
  graph.widths = {6, 4};
  SUBCASE("graph conv + tanh") {
    graph.activation = Activation::tanh;
    check_gradients(graph, false);
  }
  SUBCASE("graph conv + relu") {
    graph.activation = Activation::relu;
    check_gradients(graph, false);
  }
  SUBCASE("graph conv, single tap") {
    graph.taps = 1;
    graph.activation = Activation::tanh;
    check_gradients(graph, false);
  }
}

TEST_CASE("gnn is exactly permutation equivariant") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Grid g = testing::random_grid(rng, trial < 5 ? 9 : 23);
    ModelConfig c;
    c.family = Family::gnn;
    c.widths = trial < 5 ? std::vector<int>{8, 6} : std::vector<int>{64, 33};
    c.taps = 3;
    c.activation = trial % 2 ? Activation::relu : Activation::tanh;
    Model m = make_model(c, g, 100 + trial);
    m.input_mean.rowwise() = Eigen::RowVectorXd::LinSpaced(kInputColumns, 0.01, 0.05);
    m.input_std.rowwise() = Eigen::RowVectorXd::LinSpaced(kInputColumns, 0.5, 1.5);
    const auto x = testing::random_input(g, rng);

    std::vector<int> perm(static_cast<std::size_t>(g.bus_count()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const Matrix P = permutation_matrix(perm);
    Model pm = m;
    pm.shift = P * m.shift * P.transpose();
    InputVector px = x;
    px.values = P * x.values;
    const Matrix a = P * forward(m, x);
    const Matrix b = forward(pm, px);
    CHECK(a == b);

    // Batched and wider: rows of different samples share the products.
    std::vector<InputVector> xs, pxs;
    for (int k = 0; k < 7; ++k) {
      xs.push_back(testing::random_input(g, rng));
      pxs.push_back(xs.back());
      pxs.back().values = P * xs.back().values;
    }
    std::vector<const InputVector*> xp, pxp;
    for (int k = 0; k < 7; ++k) {
      xp.push_back(&xs[k]);
      pxp.push_back(&pxs[k]);
    }
    const auto ya = forward_many(m, xp), yb = forward_many(pm, pxp);
    for (int k = 0; k < 7; ++k) CHECK(Matrix(P * ya[k]) == yb[k]);
  }
}

TEST_CASE("single-tap gnn has no mixing between buses") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  ModelConfig c;
  c.family = Family::gnn;
  c.widths = {8};
  c.taps = 1;
  const Model m = make_model(c, g, 2);
  Rng rng(6);
  auto x = testing::random_input(g, rng);
  const Matrix before = forward(m, x);
  x.values.row(4).array() += 0.5;
  const Matrix after = forward(m, x);
  for (int i = 0; i < g.bus_count(); ++i) {
    if (i == 4) CHECK(before.row(i) != after.row(i));
    else CHECK(before.row(i) == after.row(i));
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  ModelConfig c;
  c.widths = {16};
  Model m = make_model(c, g, 1);
  const auto params = m.params;
  TrainOptions o;
  o.learning_rate = 0.0;
  o.max_epochs = 5;
  o.patience = 50;
  const auto rep = train(m, small_dataset(), o);
  CHECK(m.params == params);
  for (double v : rep.train_loss) CHECK(v == rep.train_loss.front());
  for (double v : rep.val_loss) CHECK(v == rep.val_loss.front());
}

TEST_CASE("a small model memorizes ten rows") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  LabeledDataset d = small_dataset();
  int train_rows = 0;
  for (auto& r : d.rows)
    if (r.split == SplitTag::train && ++train_rows > 10) r.split = SplitTag::val;
  d.norm = compute_norm_stats(d);
  REQUIRE(d.select(SplitTag::train).size() == 10);
  ModelConfig c;
  c.widths = {64, 64};
  c.activation = Activation::tanh;
  Model m = make_model(c, g, 3);
  TrainOptions o;
  o.learning_rate = 3e-3;
  o.weight_decay = 0.0;
  o.batch_size = 10;
  o.max_epochs = 3000;
  o.patience = 3000;
  const auto rep = train(m, d, o);
  CHECK(*std::min_element(rep.train_loss.begin(), rep.train_loss.end()) <= 1e-4);
}

TEST_CASE("training is deterministic and keeps the best validation snapshot") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  for (auto family : {Family::fcnn, Family::gnn}) {
    ModelConfig c;
    c.family = family;
    c.widths = {12, 12};
    c.dropout = 0.1;
    TrainOptions o;
    o.learning_rate = 1e-2;
    o.batch_size = 5;
    o.max_epochs = 40;
    o.patience = 5;
    o.seed = 17;
    Model a = make_model(c, g, 21), b = make_model(c, g, 21);
    const auto ra = train(a, small_dataset(), o);
    const auto rb = train(b, small_dataset(), o);
    CHECK(ra == rb);
    CHECK(a.params == b.params);
    for (double v : ra.val_loss) CHECK(ra.best_val <= v);
    CHECK(ra.val_loss[static_cast<std::size_t>(ra.best_epoch)] == ra.best_val);
    CHECK(evaluate_loss(a, small_dataset().select(SplitTag::val)) == ra.best_val);
  }
}

TEST_CASE("hyperparameter search") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  ModelConfig base;
  base.widths = {8};
  TrainOptions o;
  o.max_epochs = 5;
  o.patience = 5;
  HyperSpace space;
  space.widths = {{8}, {16, 8}, {4}};
  space.learning_rate = {1e-3, 3e-3, 1e-2};
  space.dropout = {0.0, 0.1};
  const auto a = hyper_search(g, small_dataset(), space, base, o, 3, 42);
  const auto b = hyper_search(g, small_dataset(), space, base, o, 3, 42);
  REQUIRE(a.trials.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a.trials[k].config == b.trials[k].config);
    CHECK(a.trials[k].options == b.trials[k].options);
    CHECK(a.trials[k].best_val == b.trials[k].best_val);
    CHECK(a.best.best_val <= a.trials[k].best_val);
  }

  const auto one = hyper_search(g, small_dataset(), space, base, o, 1, 7);
  REQUIRE(one.trials.size() == 1);
  CHECK(one.best.config == one.trials[0].config);

  const auto point = hyper_search(g, small_dataset(), HyperSpace::single(base, o), base, o, 2, 7);
  for (const auto& t : point.trials) {
    CHECK(t.config == base);
    CHECK(t.options.learning_rate == o.learning_rate);
  }
  CHECK_THROWS_AS(hyper_search(g, small_dataset(), space, base, o, 0, 7), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  for (auto family : {Family::fcnn, Family::gnn}) {
    ModelConfig c;
    c.family = family;
    c.widths = {5, 3};
    c.activation = Activation::tanh;
    Model m = make_model(c, g, 12);
    fit_normalization(m, small_dataset());
    const auto path = std::filesystem::temp_directory_path() / "l2d_unit_model.json";
    save_checkpoint(path, m, {{"note", "test"}});
    const Model back = load_checkpoint(path);
    CHECK(back.config == m.config);
    CHECK(back.params == m.params);
    CHECK(back.norm == m.norm);
    CHECK(back.input_std == m.input_std);
    Rng rng(3);
    const auto x = testing::random_input(g, rng);
    CHECK(forward(back, x) == forward(m, x));
  }
  CHECK_THROWS_AS(load_checkpoint(testing::fixture("small14.json")), DataError);
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.widths = {0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.widths = {4};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.dropout = 0.0;
  c.taps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
