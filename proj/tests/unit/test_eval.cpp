#include <doctest.h>

#include <cmath>
#include <fstream>

#include "../support/random_grid.hpp"
#include "l2d/eval.hpp"

using namespace l2d;
using namespace l2d::eval;

namespace {

const Grid& grid14() {
  static const Grid g = load_grid(testing::fixture("small14.json"));
  return g;
}

const LabeledDataset& labelled() {
  static const LabeledDataset data = [] {
    const auto nominal = read_inputs(testing::fixture("small14_nominal.csv"), grid14()).at(0);
    LabeledDataset d = label_dataset(grid14(), sample_synthetic(nominal, 24, 0.3, 5));
    split(d, SplitScheme::random, {0.5, 0.25, 0.25}, 2);
    return d;
  }();
  return data;
}

std::vector<const LabeledRow*> all_rows() {
  std::vector<const LabeledRow*> rows;
  for (const auto& r : labelled().rows)
    if (r.converged) rows.push_back(&r);
  return rows;
}

// Oracle labels plus seeded noise on every control.
Predictor noisy(double scale_v, double scale_q) {
  return [=](const LabeledRow& row) {
    Rng rng(static_cast<std::uint64_t>(row.timestamp));
    ControlVector y = row.y_star;
    for (Eigen::Index i = 0; i < y.values.rows(); ++i) {
      if (y.mask(i, kVset)) y.values(i, kVset) += rng.uniform(-scale_v, scale_v);
      if (y.mask(i, kCompQ)) y.values(i, kCompQ) += rng.uniform(-scale_q, scale_q);
    }
    return y;
  };
}

}  // namespace

TEST_CASE("replaying the oracle's labels") {
  const auto rows = all_rows();
  REQUIRE(rows.size() >= 20);
  const auto m = evaluate(grid14(), rows, oracle_predictor(), EvalOptions{}, "Optimal", true);
  CHECK(m.mae_v == 0.0);
  CHECK(m.mae_q == 0.0);
  CHECK(m.loss_gap_mean == 0.0);
  CHECK(m.loss_gap_std == 0.0);
  CHECK(m.pf_failures == 0);
  int oracle_feasible = 0;
  for (const auto* r : rows) {
    const auto sol = solve_pf(grid14(), r->x, r->y_star, OrpdOptions{}.pf);
    oracle_feasible += check_constraints(grid14(), r->x, r->y_star, sol).feasible;
  }
  CHECK(m.feas_pct == doctest::Approx(100.0 * oracle_feasible / rows.size()));
  CHECK(m.feas_pct == 100.0);
}

TEST_CASE("a constant-zero predictor is never feasible") {
  const auto rows = all_rows();
  const Predictor zero = [](const LabeledRow& row) {
    ControlVector y = row.y_star;
    y.values.setZero();
    return y;
  };
  const auto m = evaluate(grid14(), rows, zero, EvalOptions{}, "zero");
  CHECK(m.feas_pct == 0.0);
  CHECK(m.feas_relaxed_pct == 0.0);
  CHECK(m.n_instances == static_cast<int>(rows.size()));
}

TEST_CASE("relaxed feasibility is monotone in rho") {
  EvalOptions o;
  o.sweep = {0.0, 0.005, 0.018, 0.05, 0.1};
  const auto m = evaluate(grid14(), all_rows(), noisy(0.04, 0.1), o, "noisy");
  REQUIRE(m.feas_sweep_pct.size() == o.sweep.size());
  for (std::size_t k = 1; k < m.feas_sweep_pct.size(); ++k) CHECK(m.feas_sweep_pct[k] >= m.feas_sweep_pct[k - 1]);
  CHECK(m.feas_relaxed_pct >= m.feas_pct);
  CHECK(m.feas_sweep_pct.front() == m.feas_pct);
  CHECK(m.mae_v > 0.0);
  CHECK(std::abs(m.mae_q - m.mae_q_pu * grid14().base_mva) <= 1e-12);
}

TEST_CASE("worker count does not change results") {
  EvalOptions one, four;
  four.workers = 4;
  const auto a = evaluate(grid14(), all_rows(), noisy(0.01, 0.05), one, "a");
  const auto b = evaluate(grid14(), all_rows(), noisy(0.01, 0.05), four, "a");
  CHECK(summary_json(a) == summary_json(b));
}

TEST_CASE("aggregates recomputed from the detail file match the summary") {
  const auto m = evaluate(grid14(), all_rows(), noisy(0.01, 0.05), EvalOptions{}, "noisy");
  const auto dir = std::filesystem::temp_directory_path() / "l2d_unit_eval";
  write_metrics(dir, grid14(), m);
  const auto back = read_metrics(dir, grid14());
  CHECK(summary_json(back) == summary_json(m));
  CHECK(back.mae_v == m.mae_v);
  CHECK(back.loss_gap_std == m.loss_gap_std);
}

TEST_CASE("comparison plots") {
  const auto dir = std::filesystem::temp_directory_path() / "l2d_unit_plots";
  const auto perfect = evaluate(grid14(), all_rows(), oracle_predictor(), EvalOptions{}, "Optimal", true);
  const auto files = emit_comparison_plots(perfect, grid14(), {"vgen_1_vset", "comp_8_q"}, dir);
  CHECK(files.size() == 4);
  std::ifstream in(dir / "plot_comp_8_q.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "index,truth,prediction");
  double last = -1e300;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    const double truth = std::stod(line.substr(a + 1, b - a - 1));
    const double pred = std::stod(line.substr(b + 1));
    CHECK(truth >= last);
    CHECK(truth == pred);
    last = truth;
    ++rows;
  }
  CHECK(rows == perfect.n_instances);
  CHECK(std::filesystem::file_size(dir / "plot_vgen_1_vset.svg") > 0);
  CHECK_THROWS_AS(emit_comparison_plots(perfect, grid14(), {"vgen_4_vset"}, dir), ConfigError);
  CHECK_THROWS_AS(emit_comparison_plots(perfect, grid14(), {"bogus"}, dir), ConfigError);
}

TEST_CASE("report table layout") {
  Metrics oracle;
  oracle.label = "Optimal";
  oracle.oracle = true;
  oracle.feas_pct = 79.8;
  oracle.feas_relaxed_pct = 100.0;
  Metrics fcnn;
  fcnn.label = "FCNN";
  fcnn.loss_gap_mean = 0.0;
  fcnn.loss_gap_std = 0.69;
  fcnn.feas_pct = 64.8;
  fcnn.feas_relaxed_pct = 92.6;
  fcnn.mae_v = 2.6e-3;
  fcnn.mae_q = 2.75;
  const std::string text = report_table({{"Historical data", {oracle, fcnn}}});
  CHECK(text.find("  Optimal   0.00 ± 0.00       79.8    100.0    --        --") != std::string::npos);
  const auto row = text.find("FCNN");
  REQUIRE(row != std::string::npos);
  const std::string line = text.substr(row, text.find('\n', row) - row);
  CHECK(line == "FCNN      0.00 ± 0.69       64.8    92.6     2.6e-03   2.75");
  const auto header = text.substr(0, text.find('\n'));
  CHECK(header.find("Losses") < header.find("Feas."));
  CHECK(header.find("Feas.*") < header.find("MAE_v"));
  CHECK(header.find("MAE_v") < header.find("MAE_q"));

  const auto single = report_table({{"Synthetic data", {fcnn}}});
  int lines = 0;
  for (char c : single) lines += c == '\n';
  CHECK(lines == 4);  // two header lines, regime line, one model row
  const auto j = report_json({{"Synthetic data", {fcnn}}});
  CHECK(j["regimes"][0]["rows"].size() == 1);
  CHECK(j["regimes"][0]["rows"][0]["feas_pct"] == 64.8);
}

TEST_CASE("evaluation of a model checks its normalization") {
  nn::ModelConfig c;
  c.widths = {4};
  nn::Model m = nn::make_model(c, grid14(), 1);
  CHECK_THROWS_AS(evaluate(m, grid14(), labelled(), EvalOptions{}, "x"), ConfigError);
  nn::fit_normalization(m, labelled());
  const auto metrics = evaluate(m, grid14(), labelled(), EvalOptions{}, "x");
  CHECK(metrics.n_instances == static_cast<int>(labelled().select(SplitTag::test).size()));
}
