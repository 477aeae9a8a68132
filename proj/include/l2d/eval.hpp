#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/datagen.hpp"
#include "l2d/nn.hpp"

namespace l2d::eval {

struct EvalOptions {
  /// Same settings the oracle uses for its final solve, so replaying its labels
  /// reproduces its losses exactly.
  PFOptions pf = OrpdOptions{}.pf;
  double tolerance = kFeasibilityTolerance;
  /// Headline relaxed-feasibility level.
  double rho = 0.018;
  std::vector<double> sweep{0.0, 0.018, 0.05};
  int workers = 1;
};

struct InstanceResult {
  Timestamp timestamp = 0;
  ControlVector y_star;
  ControlVector y_pred;
  double p_loss_oracle = 0.0;
  bool pf_converged = false;
  double p_loss_pred = 0.0;  // NaN when the power flow failed
  /// Feasibility at ρ = 0, at the headline ρ, and at each sweep level.
  bool feasible = false;
  bool feasible_relaxed = false;
  std::vector<bool> feasible_sweep;
  double max_violation = 0.0;  // at ρ = 0; NaN when the power flow failed
};

struct Metrics {
  std::string label;
  bool oracle = false;
  double base_mva = 100.0;
  double rho = 0.018;
  std::vector<double> sweep;

  double mae_v = 0.0;     // p.u.
  double mae_q_pu = 0.0;  // p.u.
  double mae_q = 0.0;     // MVar
  double loss_gap_mean = 0.0;  // % relative to oracle
  double loss_gap_std = 0.0;
  double feas_pct = 0.0;
  double feas_relaxed_pct = 0.0;
  std::vector<double> feas_sweep_pct;
  int n_instances = 0;
  int pf_failures = 0;

  std::vector<InstanceResult> detail;
};

/// Controls for one labelled row.
using Predictor = std::function<ControlVector(const LabeledRow&)>;

Predictor oracle_predictor();
Predictor model_predictor(const nn::Model& model, const Grid& grid);

/// Runs the power flow under predicted controls for every row and aggregates.
/// Predictions are used as given, without projection into their boxes.
Metrics evaluate(const Grid& grid, const std::vector<const LabeledRow*>& rows,
                 const Predictor& predictor, const EvalOptions& options, const std::string& label,
                 bool oracle = false);

/// Evaluates a trained model on the test split of a dataset.
Metrics evaluate(const nn::Model& model, const Grid& grid, const LabeledDataset& data,
                 const EvalOptions& options, const std::string& label);

/// Recomputes every summary field of `m` from m.detail.
void aggregate(Metrics& m, const Grid& grid);

nlohmann::json summary_json(const Metrics& m);
/// metrics.json (summary) and detail.csv (one row per instance) in `dir`.
void write_metrics(const std::filesystem::path& dir, const Grid& grid, const Metrics& m);
Metrics read_metrics(const std::filesystem::path& dir, const Grid& grid);

/// For each selected control column (e.g. "vgen_1_vset", "comp_8_q") writes
/// plot_<column>.csv with instances sorted by ground truth and plot_<column>.svg.
/// An empty selection picks every control column. Returns the written files.
std::vector<std::filesystem::path> emit_comparison_plots(const Metrics& m, const Grid& grid,
                                                         const std::vector<std::string>& selection,
                                                         const std::filesystem::path& dir);

struct Regime {
  std::string name;
  std::vector<Metrics> rows;
};

/// Plain-text comparison table, one block per data regime.
std::string report_table(const std::vector<Regime>& regimes);
nlohmann::json report_json(const std::vector<Regime>& regimes);

}  // namespace l2d::eval
