#include "l2d/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "l2d/datagen.hpp"
#include "l2d/eval.hpp"
#include "l2d/nn.hpp"

namespace l2d::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

json default_config() {
  const OrpdOptions orpd;
  const eval::EvalOptions ev;
  json model = nn::to_json(nn::ModelConfig{});
  json train = nn::to_json(nn::TrainOptions{});
  train.erase("seed");
  return {
      {"grid", nullptr},
      {"output_dir", "."},
      {"seed", 0},
      {"workers", 1},
      {"pf", {{"tolerance", PFOptions{}.tolerance}, {"max_iter", PFOptions{}.max_iter}}},
      {"orpd",
       {{"pf_tolerance", orpd.pf.tolerance},
        {"pf_max_iter", orpd.pf.max_iter},
        {"fd_step", orpd.fd_step},
        {"initial_penalty", orpd.initial_penalty},
        {"penalty_growth", orpd.penalty_growth},
        {"max_outer", orpd.max_outer},
        {"max_inner", orpd.max_inner},
        {"stationarity_tol", orpd.stationarity_tol},
        {"feasibility_tol", orpd.feasibility_tol},
        {"restarts", orpd.restarts},
        {"relaxation_ladder", orpd.relaxation_ladder},
        {"brute_force_resolution", 0}}},
      {"data",
       {{"generation", nullptr},
        {"load", nullptr},
        {"inputs", nullptr},
        {"controls", nullptr},
        {"nominal", nullptr},
        {"dataset", nullptr},
        {"count", 10000},
        {"spread", 0.3},
        {"first_timestamp", "2000-01-01T00:00:00"},
        {"split", {{"scheme", "random"}, {"fractions", {0.77, 0.18, 0.05}}}},
        {"bins", 20}}},
      {"model", model},
      {"train", train},
      {"hyper", {{"budget", 8}, {"space", json::object()}}},
      {"eval",
       {{"models", json::array()},
        {"rho", ev.rho},
        {"sweep", ev.sweep},
        {"tolerance", ev.tolerance}}},
      {"report", {{"regimes", json::array()}}},
      {"plot", {{"metrics", json::array()}, {"columns", json::array()}}},
  };
}

// Objects whose keys are free-form.
bool free_form(const std::string& pointer) { return pointer == "/hyper/space"; }

void check_keys(const json& user, const json& defaults, const std::string& pointer) {
  for (const auto& [key, value] : user.items()) {
    const std::string child = pointer + "/" + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key " + child);
    if (value.is_object() && defaults.at(key).is_object() && !free_form(child))
      check_keys(value, defaults.at(key), child);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// FNV-1a over the file bytes.
std::string content_hash(const fs::path& path) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : read_text(path)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Context {
  std::string command;
  std::string manifest;  // manifest file stem; defaults to the command
  json cfg;
  fs::path base;
  fs::path out;
  bool print = false;
  std::ostream* err = nullptr;
  json inputs = json::object();
  std::vector<fs::path> outputs;

  std::ostream& log() const { return *err << "[l2d " << command << "] "; }

  const json& at(const std::string& pointer) const {
    static const json null_value;
    const json::json_pointer p(pointer);
    return cfg.contains(p) ? cfg.at(p) : null_value;
  }

  template <class T>
  T get(const std::string& pointer) const {
    const json& v = at(pointer);
    if (v.is_null()) throw ConfigError("config " + pointer + ": missing value");
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config " + pointer + ": " + e.what());
    }
  }

  fs::path resolve(const std::string& text) const {
    const fs::path p(text);
    return p.is_absolute() ? p : base / p;
  }

  void record(const std::string& pointer, const fs::path& path) {
    inputs[pointer] = {{"path", path.string()}, {"hash", content_hash(path)}};
  }

  /// Path from the config; when unset, the first fallback that exists in the
  /// output directory.
  fs::path input(const std::string& pointer, std::initializer_list<const char*> fallbacks = {}) {
    const json& v = at(pointer);
    fs::path path;
    if (!v.is_null()) {
      if (!v.is_string()) throw ConfigError("config " + pointer + ": expected a path");
      path = resolve(v.get<std::string>());
      if (!fs::exists(path)) throw ConfigError("config " + pointer + ": " + path.string() + " does not exist");
    } else {
      for (const char* name : fallbacks) {
        if (fs::exists(out / name)) {
          path = out / name;
          break;
        }
      }
      if (path.empty()) throw ConfigError("config " + pointer + ": missing value");
    }
    if (fs::is_regular_file(path)) record(pointer, path);
    return path;
  }

  std::optional<fs::path> optional_input(const std::string& pointer) {
    if (at(pointer).is_null()) return std::nullopt;
    return input(pointer);
  }

  fs::path output(const fs::path& relative) {
    outputs.push_back(relative);
    return out / relative;
  }

  Grid grid() {
    const fs::path path = input("/grid");
    return load_grid(path);
  }
};

PFOptions pf_options(const Context& c) {
  return {c.get<double>("/pf/tolerance"), c.get<int>("/pf/max_iter")};
}

OrpdOptions orpd_options(const Context& c) {
  OrpdOptions o;
  o.pf = {c.get<double>("/orpd/pf_tolerance"), c.get<int>("/orpd/pf_max_iter")};
  o.fd_step = c.get<double>("/orpd/fd_step");
  o.initial_penalty = c.get<double>("/orpd/initial_penalty");
  o.penalty_growth = c.get<double>("/orpd/penalty_growth");
  o.max_outer = c.get<int>("/orpd/max_outer");
  o.max_inner = c.get<int>("/orpd/max_inner");
  o.stationarity_tol = c.get<double>("/orpd/stationarity_tol");
  o.feasibility_tol = c.get<double>("/orpd/feasibility_tol");
  o.restarts = c.get<int>("/orpd/restarts");
  o.relaxation_ladder = c.get<std::vector<double>>("/orpd/relaxation_ladder");
  o.seed = c.get<std::uint64_t>("/seed");
  return o;
}

int workers(const Context& c) {
  const int w = c.get<int>("/workers");
  if (w < 1) throw ConfigError("config /workers: must be at least 1");
  return w;
}

json controls_json(const Grid& grid, const ControlVector& y) {
  json j = json::object();
  const auto names = control_columns(grid);
  for (const auto& name : names) {
    const auto key = *ColumnKey::parse(name);
    j[name] = y.values(key.bus, locate(grid, key)->column);
  }
  return j;
}

/// Clamps vset = 1 and q = 0 into their boxes.
ControlVector default_controls(const Grid& grid) {
  ControlVector y = ControlVector::zeros(grid);
  for (const auto& g : grid.volt_gens)
    y.values(g.bus, kVset) = std::clamp(1.0, grid.vset_min(g), grid.vset_max(g));
  for (const auto& c : grid.compensators) y.values(c.bus, kCompQ) = std::clamp(0.0, c.q_min_pu, c.q_max_pu);
  return y;
}

std::vector<ControlVector> read_controls(const fs::path& path, const Grid& grid) {
  const BatchFile file = read_batch_file(path);
  std::vector<ControlVector> rows(file.table.rows(), default_controls(grid));
  for (std::size_t c = 0; c < file.table.columns.size(); ++c) {
    const auto& name = file.table.columns[c];
    const auto key = ColumnKey::parse(name);
    const auto target = key ? locate(grid, *key) : std::nullopt;
    if (!target || !target->control) throw DataError(path.string() + ": '" + name + "' is not a control column");
    const auto unit = file.units.find(key->quantity);
    if (unit == file.units.end()) throw DataError(path.string() + ": no unit declared for '" + key->quantity + "'");
    const double scale = unit_scale(unit->second, grid.base_mva);
    for (int r = 0; r < file.table.rows(); ++r)
      rows[r].values(key->bus, target->column) = file.table.values(r, c) * scale;
  }
  return rows;
}

InputVector mean_input(const std::vector<InputVector>& rows) {
  if (rows.empty()) throw DataError("nominal profile: no rows");
  InputVector x{Matrix::Zero(rows[0].values.rows(), rows[0].values.cols()), std::nullopt};
  for (const auto& r : rows) x.values += r.values;
  x.values /= static_cast<double>(rows.size());
  return x;
}

std::string stamp(const std::optional<Timestamp>& ts) { return ts ? format_timestamp(*ts) : ""; }

// ---------------------------------------------------------------------------
// Subcommands

void grid_validate(Context& c) {
  const fs::path path = c.input("/grid");
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const ValidationReport report = validate(parse_grid_unchecked(doc));
  json violations = json::array();
  for (const auto& v : report.violations) violations.push_back({{"path", v.path}, {"message", v.message}});
  write_json(c.output("validation.json"), {{"ok", report.ok()}, {"violations", violations}});
  if (!report.ok()) {
    for (const auto& v : report.violations) c.log() << v.path << ": " << v.message << "\n";
    throw DataError("grid has " + std::to_string(report.violations.size()) + " violation(s)");
  }
  c.log() << "grid is valid\n";
}

void pf_run(Context& c) {
  const Grid grid = c.grid();
  std::vector<InputVector> xs;
  if (const auto p = c.optional_input("/data/inputs")) xs = read_inputs(*p, grid);
  else xs.push_back(InputVector::zeros(grid));
  std::vector<ControlVector> ys;
  if (const auto p = c.optional_input("/data/controls")) ys = read_controls(*p, grid);
  else ys.push_back(default_controls(grid));
  if (ys.size() != 1 && ys.size() != xs.size())
    throw DataError("controls have " + std::to_string(ys.size()) + " rows, inputs " + std::to_string(xs.size()));

  const PFOptions options = pf_options(c);
  json instances = json::array();
  int failures = 0;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const ControlVector& y = ys.size() == 1 ? ys[0] : ys[r];
    const PFSolution sol = solve_pf(grid, xs[r], y, options);
    if (!sol.converged) ++failures;
    json buses = json::array();
    for (int i = 0; i < grid.bus_count(); ++i)
      buses.push_back({{"id", i}, {"vm_pu", std::abs(sol.voltages[i])}, {"va_rad", std::arg(sol.voltages[i])}});
    json flows = json::array();
    for (std::size_t l = 0; l < sol.flows.size(); ++l) {
      const auto& f = sol.flows[l];
      flows.push_back({{"line", l},
                       {"p_from_pu", f.from_to.real()},
                       {"q_from_pu", f.from_to.imag()},
                       {"p_to_pu", f.to_from.real()},
                       {"q_to_pu", f.to_from.imag()}});
    }
    instances.push_back({{"timestamp", stamp(xs[r].timestamp)},
                         {"status", to_string(sol.status)},
                         {"converged", sol.converged},
                         {"iterations", sol.iterations},
                         {"residual_norm", sol.residual_norm},
                         {"p_loss_pu", sol.p_loss},
                         {"slack_p_pu", sol.slack_p},
                         {"gen_q_pu", sol.gen_q},
                         {"buses", buses},
                         {"flows", flows}});
  }
  write_json(c.output("pf_solution.json"), {{"base_mva", grid.base_mva}, {"instances", instances}});
  c.log() << xs.size() - failures << "/" << xs.size() << " power flows converged\n";
  if (failures > 0) throw NumericalError(std::to_string(failures) + " power flow(s) did not converge");
}

json orpd_json(const Grid& grid, const OrpdSolution& s) {
  json j = {{"converged", s.converged},
            {"p_loss_pu", s.p_loss},
            {"iterations", s.iterations},
            {"inner_pf_count", s.inner_pf_count},
            {"kkt_stationarity", s.kkt_stationarity},
            {"max_violation", s.max_violation},
            {"note", s.note},
            {"controls_pu", controls_json(grid, s.y_star)}};
  j["feasible_at"] = s.feasible_at ? json(*s.feasible_at) : json(nullptr);
  return j;
}

void orpd_solve(Context& c) {
  const Grid grid = c.grid();
  std::vector<InputVector> xs;
  if (const auto p = c.optional_input("/data/inputs")) xs = read_inputs(*p, grid);
  else if (const auto p = c.optional_input("/data/nominal")) xs.push_back(mean_input(read_inputs(*p, grid)));
  else throw ConfigError("config /data/inputs: missing value");
  const OrpdOptions options = orpd_options(c);
  const int resolution = c.get<int>("/orpd/brute_force_resolution");

  json instances = json::array();
  int failures = 0;
  for (const auto& x : xs) {
    const OrpdSolution s = solve_orpd(grid, x, options);
    if (!s.converged) ++failures;
    json j = orpd_json(grid, s);
    j["timestamp"] = stamp(x.timestamp);
    if (resolution > 0) j["brute_force"] = orpd_json(grid, brute_force_orpd(grid, x, resolution, options));
    instances.push_back(j);
  }
  write_json(c.output("orpd_solution.json"), {{"base_mva", grid.base_mva}, {"instances", instances}});
  c.log() << xs.size() - failures << "/" << xs.size() << " instances solved\n";
  if (failures > 0) throw NumericalError(std::to_string(failures) + " instance(s) did not converge");
}

void data_ingest(Context& c) {
  const Grid grid = c.grid();
  const IngestResult result = ingest_timeseries(c.input("/data/generation"), c.input("/data/load"), grid);
  BatchFile file;
  file.units = {{"p", "pu"}, {"q", "pu"}};
  file.preamble.push_back("base_mva: " + format_number(grid.base_mva));
  file.table = result.table;
  write_batch_file(c.output("timeseries.csv"), file);
  const auto& r = result.report;
  write_json(c.output("ingest_report.json"), {{"rows", result.table.rows()},
                                               {"unmapped_columns", r.unmapped_columns},
                                               {"off_hour_rows", r.off_hour_rows},
                                               {"gap_rows", r.gap_rows},
                                               {"unmatched_timestamps", r.unmatched_timestamps},
                                               {"warnings", r.warnings}});
  for (const auto& w : r.warnings) c.log() << "warning: " << w << "\n";
  c.log() << result.table.rows() << " aligned rows\n";
}

void data_synth(Context& c) {
  const Grid grid = c.grid();
  const fs::path nominal_path = c.input("/data/nominal", {"timeseries.csv"});
  const InputVector nominal = mean_input(read_inputs(nominal_path, grid));
  const int count = c.get<int>("/data/count");
  if (count < 1) throw ConfigError("config /data/count: must be positive");
  const auto xs = sample_synthetic(nominal, count, c.get<double>("/data/spread"), c.get<std::uint64_t>("/seed"),
                                   parse_timestamp(c.get<std::string>("/data/first_timestamp")));
  write_inputs(c.output("synthetic.csv"), grid, xs);
  c.log() << count << " synthetic inputs\n";
}

void data_label(Context& c) {
  const Grid grid = c.grid();
  const auto xs = read_inputs(c.input("/data/inputs", {"synthetic.csv", "timeseries.csv"}), grid);
  const LabelOptions options{orpd_options(c), workers(c)};
  const LabeledDataset data = label_dataset(grid, xs, options);
  write_dataset(c.output("labeled.csv"), grid, data);
  c.outputs.push_back(stats_sidecar("labeled.csv"));
  write_drop_manifest(c.output("dropped.csv"), data);
  c.log() << "converged " << format_number(100.0 * data.converged_fraction()) << "% of " << xs.size()
          << " rows\n";
}

void data_split(Context& c) {
  const Grid grid = c.grid();
  LabeledDataset data = read_dataset(c.input("/data/dataset", {"labeled.csv"}), grid);
  const auto fractions = c.get<std::vector<double>>("/data/split/fractions");
  if (fractions.size() != 3) throw ConfigError("config /data/split/fractions: expected three values");
  split(data, parse_split_scheme(c.get<std::string>("/data/split/scheme")), {fractions[0], fractions[1], fractions[2]},
        c.get<std::uint64_t>("/seed"));
  write_dataset(c.output("dataset.csv"), grid, data);
  c.outputs.push_back(stats_sidecar("dataset.csv"));
  c.log() << data.select(SplitTag::train).size() << " train, " << data.select(SplitTag::val).size() << " val, "
          << data.select(SplitTag::test).size() << " test rows\n";
}

void data_stats(Context& c) {
  const BatchFile file = read_batch_file(c.input("/data/inputs", {"timeseries.csv", "synthetic.csv"}));
  const int bins = c.get<int>("/data/bins");
  if (bins < 1) throw ConfigError("config /data/bins: must be positive");
  const StatReport report = dataset_stats(file.table, bins);
  fs::create_directories(c.out / "stats");
  emit_stats(report, c.out / "stats");
  json columns = json::array();
  for (const auto& col : report.columns) {
    columns.push_back(col.column);
    c.outputs.push_back(fs::path("stats") / ("hist_" + col.column + ".csv"));
    c.outputs.push_back(fs::path("stats") / ("season_hour_" + col.column + ".csv"));
  }
  c.log() << report.columns.size() << " columns summarized\n";
}

nn::ModelConfig model_config(const Context& c) {
  nn::ModelConfig config = nn::model_config_from_json(c.at("/model"));
  config.validate();
  return config;
}

nn::TrainOptions train_options(const Context& c) {
  nn::TrainOptions o = nn::train_options_from_json(c.at("/train"));
  o.seed = c.get<std::uint64_t>("/seed");
  return o;
}

void train(Context& c) {
  const Grid grid = c.grid();
  const fs::path dataset_path = c.input("/data/dataset", {"dataset.csv"});
  const LabeledDataset data = read_dataset(dataset_path, grid);
  const nn::ModelConfig config = model_config(c);
  const nn::TrainOptions options = train_options(c);

  nn::Model model = nn::make_model(config, grid, options.seed);
  nn::fit_normalization(model, data);
  const nn::TrainReport report = nn::train(model, data, options);

  const std::string family = nn::to_string(config.family);
  c.manifest = "train_" + family;
  std::ostringstream curve;
  curve << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < report.train_loss.size(); ++e)
    curve << e << "," << format_number(report.train_loss[e]) << "," << format_number(report.val_loss[e]) << "\n";
  write_text(c.output("train_" + family + ".csv"), curve.str());
  nn::save_checkpoint(c.output("model_" + family + ".json"), model,
                      {{"dataset_hash", content_hash(dataset_path)}, {"train_report", nn::to_json(report)}});
  c.log() << family << ": best epoch " << report.best_epoch << ", stopped at " << report.stop_epoch
          << ", val loss " << format_number(report.best_val) << "\n";
  if (report.diverged) throw NumericalError("training diverged: " + report.note);
}

json trial_json(const nn::Trial& t) {
  return {{"config", nn::to_json(t.config)},
          {"options", nn::to_json(t.options)},
          {"best_val", t.best_val},
          {"best_epoch", t.best_epoch}};
}

void hyper(Context& c) {
  const Grid grid = c.grid();
  const LabeledDataset data = read_dataset(c.input("/data/dataset", {"dataset.csv"}), grid);
  const nn::ModelConfig config = model_config(c);
  const nn::TrainOptions options = train_options(c);

  nn::HyperSpace space = nn::HyperSpace::single(config, options);
  const nn::HyperSpace given = nn::hyper_space_from_json(c.at("/hyper/space"));
  if (!given.widths.empty()) space.widths = given.widths;
  if (!given.activations.empty()) space.activations = given.activations;
  if (!given.dropout.empty()) space.dropout = given.dropout;
  if (!given.taps.empty()) space.taps = given.taps;
  if (!given.learning_rate.empty()) space.learning_rate = given.learning_rate;
  if (!given.weight_decay.empty()) space.weight_decay = given.weight_decay;
  if (!given.batch_size.empty()) space.batch_size = given.batch_size;

  const nn::SearchResult result =
      nn::hyper_search(grid, data, space, config, options, c.get<int>("/hyper/budget"), options.seed);
  json trials = json::array();
  for (const auto& t : result.trials) trials.push_back(trial_json(t));
  write_json(c.output("hyper.json"),
             {{"space", nn::to_json(space)}, {"best", trial_json(result.best)}, {"trials", trials}});
  c.log() << result.trials.size() << " trials, best val loss " << format_number(result.best.best_val) << "\n";
}

std::string slug(std::string label) {
  for (char& ch : label) ch = std::isalnum(static_cast<unsigned char>(ch)) ? std::tolower(ch) : '_';
  return label;
}

std::string upper(std::string text) {
  for (char& ch : text) ch = std::toupper(static_cast<unsigned char>(ch));
  return text;
}

void run_eval(Context& c) {
  const Grid grid = c.grid();
  const LabeledDataset data = read_dataset(c.input("/data/dataset", {"dataset.csv"}), grid);
  eval::EvalOptions options;
  options.pf = orpd_options(c).pf;
  options.tolerance = c.get<double>("/eval/tolerance");
  options.rho = c.get<double>("/eval/rho");
  options.sweep = c.get<std::vector<double>>("/eval/sweep");
  options.workers = workers(c);

  std::vector<std::pair<std::string, fs::path>> models;
  const json& listed = c.at("/eval/models");
  if (!listed.is_array()) throw ConfigError("config /eval/models: expected an array");
  for (std::size_t k = 0; k < listed.size(); ++k) {
    const std::string pointer = "/eval/models/" + std::to_string(k);
    const json& m = listed[k];
    if (m.is_string()) {
      models.emplace_back("", c.input(pointer));
    } else if (m.is_object() && m.contains("checkpoint")) {
      models.emplace_back(m.value("label", ""), c.input(pointer + "/checkpoint"));
    } else {
      throw ConfigError("config " + pointer + ": expected a path or {label, checkpoint}");
    }
  }
  if (models.empty()) {
    for (const char* name : {"model_fcnn.json", "model_gnn.json"}) {
      if (fs::exists(c.out / name)) {
        models.emplace_back("", c.out / name);
        c.record(std::string("/eval/models/") + name, c.out / name);
      }
    }
  }

  std::vector<eval::Metrics> results;
  results.push_back(eval::evaluate(grid, data.select(SplitTag::test), eval::oracle_predictor(), options,
                                   "Optimal", true));
  for (const auto& [label, path] : models) {
    const nn::Model model = nn::load_checkpoint(path);
    results.push_back(
        eval::evaluate(model, grid, data, options, label.empty() ? upper(nn::to_string(model.config.family)) : label));
  }

  json summaries = json::array();
  for (const auto& m : results) summaries.push_back(eval::summary_json(m));
  fs::create_directories(c.out / "eval");
  write_json(c.output("eval/summary.json"), summaries);
  for (const auto& m : results) {
    const fs::path dir = fs::path("eval") / slug(m.label);
    fs::create_directories(c.out / dir);
    eval::write_metrics(c.out / dir, grid, m);
    c.outputs.push_back(dir / "metrics.json");
    c.outputs.push_back(dir / "detail.csv");
    c.log() << m.label << ": MAE_v " << format_number(m.mae_v) << " p.u., feasible "
            << format_number(m.feas_pct) << "%, loss gap " << format_number(m.loss_gap_mean) << "%\n";
  }
}

/// Metric directories under <out>/eval, oracle first.
std::vector<fs::path> eval_dirs(const Context& c) {
  std::vector<fs::path> dirs;
  if (fs::is_directory(c.out / "eval"))
    for (const auto& entry : fs::directory_iterator(c.out / "eval"))
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
    const bool oa = a.filename() == "optimal", ob = b.filename() == "optimal";
    return oa != ob ? oa : a < b;
  });
  if (dirs.empty()) throw ConfigError("no metrics found under " + (c.out / "eval").string());
  return dirs;
}

std::vector<fs::path> metric_dirs(Context& c, const std::string& pointer) {
  const json& listed = c.at(pointer);
  if (listed.is_null() || (listed.is_array() && listed.empty())) return eval_dirs(c);
  if (!listed.is_array()) throw ConfigError("config " + pointer + ": expected an array");
  std::vector<fs::path> dirs;
  for (std::size_t k = 0; k < listed.size(); ++k) {
    const fs::path dir = c.input(pointer + "/" + std::to_string(k));
    c.record(pointer + "/" + std::to_string(k), dir / "metrics.json");
    dirs.push_back(dir);
  }
  return dirs;
}

void report(Context& c) {
  const Grid grid = c.grid();
  std::vector<eval::Regime> regimes;
  const json& listed = c.at("/report/regimes");
  if (!listed.is_array()) throw ConfigError("config /report/regimes: expected an array");
  for (std::size_t k = 0; k < listed.size(); ++k) {
    const std::string pointer = "/report/regimes/" + std::to_string(k);
    eval::Regime regime{c.get<std::string>(pointer + "/name"), {}};
    for (const auto& dir : metric_dirs(c, pointer + "/metrics")) regime.rows.push_back(eval::read_metrics(dir, grid));
    regimes.push_back(std::move(regime));
  }
  if (regimes.empty()) {
    eval::Regime regime{"Synthetic", {}};
    for (const auto& dir : eval_dirs(c)) {
      c.record("/report/eval/" + dir.filename().string(), dir / "metrics.json");
      regime.rows.push_back(eval::read_metrics(dir, grid));
    }
    regimes.push_back(std::move(regime));
  }
  write_text(c.output("report.txt"), eval::report_table(regimes));
  write_json(c.output("report.json"), eval::report_json(regimes));
  c.log() << regimes.size() << " regime(s) tabulated\n";
}

void plot(Context& c) {
  const Grid grid = c.grid();
  const auto columns = c.get<std::vector<std::string>>("/plot/columns");
  for (const auto& dir : metric_dirs(c, "/plot/metrics")) {
    const eval::Metrics m = eval::read_metrics(dir, grid);
    const fs::path rel = fs::path("plots") / slug(m.label);
    fs::create_directories(c.out / rel);
    for (const auto& file : eval::emit_comparison_plots(m, grid, columns, c.out / rel))
      c.outputs.push_back(rel / file.filename());
  }
  c.log() << c.outputs.size() << " plot files\n";
}

// ---------------------------------------------------------------------------
// Flags

enum class Kind { value, path, paths, values };

struct Flag {
  std::string name;
  std::string pointer;
  std::string help;
  Kind kind = Kind::value;
};

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

struct Leaf {
  std::string command;
  std::function<void(Context&)> handler;
  std::vector<Flag> flags;
  // Filled by CLI11.
  std::string config;
  std::string output;
  std::vector<std::string> sets;
  bool print = false;
  std::vector<std::vector<std::string>> values;
};

const std::vector<Flag> kCommon = {
    {"--grid", "/grid", "Grid file", Kind::path},
    {"--seed", "/seed", "Random seed"},
    {"--workers", "/workers", "Worker threads"},
};

json version_info() {
  return {{"l2d", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

int execute(Leaf& leaf, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  Context c;
  c.command = leaf.command;
  c.err = &err;
  c.print = leaf.print;
  c.cfg = default_config();
  c.base = fs::current_path();
  if (!leaf.config.empty()) {
    const fs::path path = fs::absolute(leaf.config);
    json user;
    try {
      user = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (!user.is_object()) throw ConfigError(path.string() + ": expected an object");
    check_keys(user, c.cfg, "");
    c.cfg.merge_patch(user);
    c.base = path.parent_path();
    c.inputs["/config"] = {{"path", path.string()}, {"hash", content_hash(path)}};
  }

  std::vector<Flag> flags = kCommon;
  flags.insert(flags.end(), leaf.flags.begin(), leaf.flags.end());
  for (std::size_t k = 0; k < flags.size(); ++k) {
    const auto& given = leaf.values[k];
    if (given.empty()) continue;
    const json::json_pointer p(flags[k].pointer);
    switch (flags[k].kind) {
      case Kind::value: c.cfg[p] = parse_value(given.back()); break;
      case Kind::path: c.cfg[p] = fs::absolute(given.back()).string(); break;
      case Kind::paths: {
        json list = json::array();
        for (const auto& g : given) list.push_back(fs::absolute(g).string());
        c.cfg[p] = list;
        break;
      }
      case Kind::values: {
        json list = json::array();
        for (const auto& g : given) list.push_back(parse_value(g));
        c.cfg[p] = list;
        break;
      }
    }
  }
  for (const auto& s : leaf.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq);
    if (key.front() != '/') {
      std::replace(key.begin(), key.end(), '.', '/');
      key.insert(key.begin(), '/');
    }
    const json::json_pointer p(key);
    if (!default_config().contains(p) && !key.starts_with("/hyper/space/"))
      throw ConfigError("unknown config key " + key);
    c.cfg[p] = parse_value(s.substr(eq + 1));
  }

  const json& dir = c.at("/output_dir");
  if (!leaf.output.empty()) c.out = fs::absolute(leaf.output);
  else if (dir.is_string()) c.out = c.resolve(dir.get<std::string>());
  else throw ConfigError("config /output_dir: expected a path");
  fs::create_directories(c.out);

  auto finish = [&](const char* status) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json outputs = json::array();
    for (const auto& o : c.outputs) outputs.push_back(o.generic_string());
    write_json(c.out / ("manifest_" + (c.manifest.empty() ? slug(c.command) : c.manifest) + ".json"), {{"command", c.command},
                                                                   {"status", status},
                                                                   {"config", c.cfg},
                                                                   {"inputs", c.inputs},
                                                                   {"outputs", outputs},
                                                                   {"seed", c.cfg.at("seed")},
                                                                   {"versions", version_info()},
                                                                   {"timing", {{"seconds", seconds}}}});
  };
  try {
    leaf.handler(c);
  } catch (const Error& e) {
    finish(to_string(e.category()));
    if (c.print && !c.outputs.empty() && fs::exists(c.out / c.outputs.front()))
      out << read_text(c.out / c.outputs.front());
    throw;
  }
  finish("ok");
  if (c.print && !c.outputs.empty()) out << read_text(c.out / c.outputs.front());
  return kOk;
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config: return kConfigError;
    case ErrorCategory::data: return kDataError;
    case ErrorCategory::numerical: return kNumericalError;
  }
  return 1;
}

void report_error(std::ostream& err, const char* category, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::replace(message.begin(), message.end(), '"', '\'');
  err << "error category=" << category << " message=\"" << message << "\"\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learning-to-dispatch toolkit: power flow, ORPD oracle, datasets, models and evaluation", "l2d"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::vector<std::unique_ptr<Leaf>> leaves;
  Leaf* chosen = nullptr;
  auto add = [&](CLI::App* parent, const std::string& name, const std::string& command, const std::string& help,
                 std::function<void(Context&)> handler, std::vector<Flag> flags) {
    auto leaf = std::make_unique<Leaf>();
    leaf->command = command;
    leaf->handler = std::move(handler);
    leaf->flags = std::move(flags);
    CLI::App* sub = parent->add_subcommand(name, help);
    sub->add_option("-c,--config", leaf->config, "JSON run configuration");
    sub->add_option("-o,--output", leaf->output, "Output directory (overrides output_dir)");
    sub->add_option("--set", leaf->sets, "Override a config entry, e.g. train.max_epochs=50");
    sub->add_flag("--print", leaf->print, "Also write the primary artifact to standard output");
    std::vector<Flag> all = kCommon;
    all.insert(all.end(), leaf->flags.begin(), leaf->flags.end());
    leaf->values.resize(all.size());
    for (std::size_t k = 0; k < all.size(); ++k) {
      auto* opt = sub->add_option(all[k].name, leaf->values[k], all[k].help + " (" + all[k].pointer + ")");
      if (all[k].kind == Kind::value || all[k].kind == Kind::path) opt->expected(1);
    }
    Leaf* raw = leaf.get();
    sub->callback([&chosen, raw] { chosen = raw; });
    leaves.push_back(std::move(leaf));
    return sub;
  };
  auto group = [&](const std::string& name, const std::string& help) {
    CLI::App* g = app.add_subcommand(name, help);
    g->require_subcommand(1);
    return g;
  };

  CLI::App* grid_cmd = group("grid", "Grid description");
  add(grid_cmd, "validate", "grid validate", "Check every grid invariant", grid_validate, {});
  CLI::App* pf_cmd = group("pf", "Power flow");
  add(pf_cmd, "run", "pf run", "Solve the power flow for each input row", pf_run,
      {{"--inputs", "/data/inputs", "Input batch file", Kind::path},
       {"--controls", "/data/controls", "Control batch file", Kind::path}});
  CLI::App* orpd_cmd = group("orpd", "Reactive power dispatch");
  add(orpd_cmd, "solve", "orpd solve", "Solve the dispatch problem for each input row", orpd_solve,
      {{"--inputs", "/data/inputs", "Input batch file", Kind::path},
       {"--nominal", "/data/nominal", "Input batch file averaged into one instance", Kind::path},
       {"--brute-force", "/orpd/brute_force_resolution", "Also scan the control box at this resolution"}});
  CLI::App* data_cmd = group("data", "Datasets");
  add(data_cmd, "ingest", "data ingest", "Align generation and load series", data_ingest,
      {{"--generation", "/data/generation", "Generation batch file", Kind::path},
       {"--load", "/data/load", "Load batch file", Kind::path}});
  add(data_cmd, "synth", "data synth", "Sample inputs around a nominal profile", data_synth,
      {{"--nominal", "/data/nominal", "Input batch file averaged into the nominal profile", Kind::path},
       {"--count", "/data/count", "Number of samples"},
       {"--spread", "/data/spread", "Relative half-width of the sampling box"}});
  add(data_cmd, "label", "data label", "Label inputs with the dispatch oracle", data_label,
      {{"--inputs", "/data/inputs", "Input batch file", Kind::path}});
  add(data_cmd, "split", "data split", "Assign train/val/test and normalization", data_split,
      {{"--dataset", "/data/dataset", "Labelled dataset", Kind::path},
       {"--scheme", "/data/split/scheme", "chronological or random"},
       {"--fractions", "/data/split/fractions", "Train, val and test fractions", Kind::values}});
  add(data_cmd, "stats", "data stats", "Histograms and season-by-hour means", data_stats,
      {{"--inputs", "/data/inputs", "Batch file", Kind::path}, {"--bins", "/data/bins", "Histogram bins"}});
  add(&app, "train", "train", "Train a model on the split dataset", train,
      {{"--dataset", "/data/dataset", "Split dataset", Kind::path},
       {"--family", "/model/family", "fcnn or gnn"},
       {"--widths", "/model/widths", "Hidden widths", Kind::values},
       {"--epochs", "/train/max_epochs", "Epoch budget"}});
  add(&app, "hyper", "hyper", "Seeded random hyperparameter search", hyper,
      {{"--dataset", "/data/dataset", "Split dataset", Kind::path},
       {"--family", "/model/family", "fcnn or gnn"},
       {"--budget", "/hyper/budget", "Number of trials"},
       {"--epochs", "/train/max_epochs", "Epoch budget per trial"}});
  add(&app, "eval", "eval", "Evaluate the oracle and trained models on the test split", run_eval,
      {{"--dataset", "/data/dataset", "Split dataset", Kind::path},
       {"--model", "/eval/models", "Model checkpoint (repeatable)", Kind::paths},
       {"--rho", "/eval/rho", "Headline constraint relaxation"}});
  add(&app, "report", "report", "Render the comparison table", report, {});
  add(&app, "plot", "plot", "Prediction versus ground-truth plots", plot,
      {{"--metrics", "/plot/metrics", "Metrics directory (repeatable)", Kind::paths},
       {"--columns", "/plot/columns", "Control columns to plot", Kind::values}});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    while (!target->get_subcommands().empty()) target = target->get_subcommands().front();
    out << target->help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "config", e.what());
    return kConfigError;
  }
  if (chosen == nullptr) {
    report_error(err, "config", "no subcommand given");
    return kConfigError;
  }

  try {
    return execute(*chosen, out, err);
  } catch (const Error& e) {
    report_error(err, to_string(e.category()), e.what());
    return exit_code(e.category());
  } catch (const json::exception& e) {
    report_error(err, "config", e.what());
    return kConfigError;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "config", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace l2d::cli
