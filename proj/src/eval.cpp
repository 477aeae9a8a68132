#include "l2d/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace l2d::eval {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

InstanceResult evaluate_one(const Grid& grid, const LabeledRow& row, const ControlVector& y,
                            const EvalOptions& options) {
  InstanceResult r;
  r.timestamp = row.timestamp;
  r.y_star = row.y_star;
  r.y_pred = y;
  r.p_loss_oracle = row.p_loss_star;
  r.feasible_sweep.assign(options.sweep.size(), false);
  r.p_loss_pred = kNaN;
  r.max_violation = kNaN;
  const auto sol = solve_pf(grid, row.x, y, options.pf);
  r.pf_converged = sol.converged;
  if (!sol.converged) return r;
  r.p_loss_pred = sol.p_loss;
  const auto base = check_constraints(grid, row.x, y, sol, 0.0, options.tolerance);
  r.feasible = base.feasible;
  r.max_violation = base.max_violation();
  r.feasible_relaxed = check_constraints(grid, row.x, y, sol, options.rho, options.tolerance).feasible;
  for (std::size_t k = 0; k < options.sweep.size(); ++k)
    r.feasible_sweep[k] = check_constraints(grid, row.x, y, sol, options.sweep[k], options.tolerance).feasible;
  return r;
}

double pct(int count, int total) { return total == 0 ? 0.0 : 100.0 * count / total; }

}  // namespace

Predictor oracle_predictor() {
  return [](const LabeledRow& row) { return row.y_star; };
}

Predictor model_predictor(const nn::Model& model, const Grid& grid) {
  return [&model, &grid](const LabeledRow& row) { return nn::predict(model, grid, row.x); };
}

Metrics evaluate(const Grid& grid, const std::vector<const LabeledRow*>& rows,
                 const Predictor& predictor, const EvalOptions& options, const std::string& label,
                 bool oracle) {
  if (rows.empty()) throw ConfigError("evaluation needs at least one instance");
  for (const auto* r : rows)
    if (!r->converged) throw DataError("evaluation rows must carry oracle labels");
  Metrics m;
  m.label = label;
  m.oracle = oracle;
  m.base_mva = grid.base_mva;
  m.rho = options.rho;
  m.sweep = options.sweep;
  m.detail.resize(rows.size());

  std::vector<ControlVector> preds;
  for (const auto* r : rows) preds.push_back(predictor(*r));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < rows.size(); k = next++)
      m.detail[k] = evaluate_one(grid, *rows[k], preds[k], options);
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(rows.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  aggregate(m, grid);
  return m;
}

Metrics evaluate(const nn::Model& model, const Grid& grid, const LabeledDataset& data,
                 const EvalOptions& options, const std::string& label) {
  if (model.buses != grid.bus_count()) throw ConfigError("model and grid disagree on the bus count");
  if (!(model.norm == data.norm))
    throw ConfigError("checkpoint normalization does not match the dataset's training statistics");
  return evaluate(grid, data.select(SplitTag::test), model_predictor(model, grid), options, label);
}

void aggregate(Metrics& m, const Grid& grid) {
  const BoolMatrix mask = control_mask(grid);
  double sum_v = 0.0, sum_q = 0.0;
  long n_v = 0, n_q = 0;
  int feasible = 0, relaxed = 0, failures = 0;
  std::vector<int> sweep(m.sweep.size(), 0);
  std::vector<double> gaps;
  for (const auto& r : m.detail) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
      if (mask(i, kVset)) {
        sum_v += std::abs(r.y_pred.values(i, kVset) - r.y_star.values(i, kVset));
        ++n_v;
      }
      if (mask(i, kCompQ)) {
        sum_q += std::abs(r.y_pred.values(i, kCompQ) - r.y_star.values(i, kCompQ));
        ++n_q;
      }
    }
    feasible += r.feasible;
    relaxed += r.feasible_relaxed;
    for (std::size_t k = 0; k < sweep.size() && k < r.feasible_sweep.size(); ++k) sweep[k] += r.feasible_sweep[k];
    if (!r.pf_converged) {
      ++failures;
      continue;
    }
    gaps.push_back(100.0 * (r.p_loss_pred - r.p_loss_oracle) / r.p_loss_oracle);
  }
  const int n = static_cast<int>(m.detail.size());
  m.n_instances = n;
  m.pf_failures = failures;
  m.mae_v = n_v ? sum_v / static_cast<double>(n_v) : 0.0;
  m.mae_q_pu = n_q ? sum_q / static_cast<double>(n_q) : 0.0;
  m.mae_q = m.mae_q_pu * m.base_mva;
  m.feas_pct = pct(feasible, n);
  m.feas_relaxed_pct = pct(relaxed, n);
  m.feas_sweep_pct.clear();
  for (int c : sweep) m.feas_sweep_pct.push_back(pct(c, n));
  m.loss_gap_mean = m.loss_gap_std = 0.0;
  if (!gaps.empty()) {
    double s = 0.0;
    for (double g : gaps) s += g;
    m.loss_gap_mean = s / static_cast<double>(gaps.size());
    if (gaps.size() > 1) {
      double q = 0.0;
      for (double g : gaps) q += (g - m.loss_gap_mean) * (g - m.loss_gap_mean);
      m.loss_gap_std = std::sqrt(q / static_cast<double>(gaps.size() - 1));
    }
  } else if (n > 0) {
    m.loss_gap_mean = m.loss_gap_std = kNaN;
  }
}

// ---------------------------------------------------------------------------
// Files

json summary_json(const Metrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"label", m.label},
          {"oracle", m.oracle},
          {"base_mva", m.base_mva},
          {"rho", m.rho},
          {"sweep", m.sweep},
          {"mae_v", m.mae_v},
          {"mae_q", m.mae_q},
          {"mae_q_pu", m.mae_q_pu},
          {"loss_gap_mean", num(m.loss_gap_mean)},
          {"loss_gap_std", num(m.loss_gap_std)},
          {"feas_pct", m.feas_pct},
          {"feas_relaxed_pct", m.feas_relaxed_pct},
          {"feas_sweep_pct", m.feas_sweep_pct},
          {"n_instances", m.n_instances},
          {"pf_failures", m.pf_failures}};
}

namespace {

std::string sweep_column(double rho) { return "feasible_rho_" + format_number(rho); }

}  // namespace

void write_metrics(const std::filesystem::path& dir, const Grid& grid, const Metrics& m) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.json");
    if (!out) throw ConfigError("cannot write into " + dir.string());
    out << summary_json(m).dump(2) << '\n';
  }
  const auto ycols = control_columns(grid);
  BatchFile f;
  f.units = {{"p", "pu"}, {"q", "pu"}, {"vset", "pu"}};
  auto& t = f.table;
  t.columns = {"p_loss_oracle", "pf_converged", "p_loss_pred", "feasible", "feasible_relaxed", "max_violation"};
  for (double rho : m.sweep) t.columns.push_back(sweep_column(rho));
  for (const auto& c : ycols) t.columns.push_back("true_" + c);
  for (const auto& c : ycols) t.columns.push_back("pred_" + c);
  t.values.resize(static_cast<Eigen::Index>(m.detail.size()), static_cast<Eigen::Index>(t.columns.size()));
  std::vector<std::pair<BusId, int>> cells;
  for (const auto& c : ycols) {
    const auto key = *ColumnKey::parse(c);
    cells.emplace_back(key.bus, locate(grid, key)->column);
  }
  for (std::size_t r = 0; r < m.detail.size(); ++r) {
    const auto& d = m.detail[r];
    t.timestamps.push_back(d.timestamp);
    Eigen::Index c = 0;
    t.values(r, c++) = d.p_loss_oracle;
    t.values(r, c++) = d.pf_converged;
    t.values(r, c++) = d.p_loss_pred;
    t.values(r, c++) = d.feasible;
    t.values(r, c++) = d.feasible_relaxed;
    t.values(r, c++) = d.max_violation;
    for (bool b : d.feasible_sweep) t.values(r, c++) = b;
    for (const auto& [bus, col] : cells) t.values(r, c++) = d.y_star.values(bus, col);
    for (const auto& [bus, col] : cells) t.values(r, c++) = d.y_pred.values(bus, col);
  }
  write_batch_file(dir / "detail.csv", f);
}

Metrics read_metrics(const std::filesystem::path& dir, const Grid& grid) {
  std::ifstream in(dir / "metrics.json");
  if (!in) throw ConfigError("cannot open " + (dir / "metrics.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError((dir / "metrics.json").string() + ": " + e.what());
  }
  Metrics m;
  m.label = j.value("label", "");
  m.oracle = j.value("oracle", false);
  m.base_mva = j.value("base_mva", grid.base_mva);
  m.rho = j.value("rho", 0.018);
  m.sweep = j.value("sweep", std::vector<double>{});

  const BatchFile f = read_batch_file(dir / "detail.csv");
  const auto& t = f.table;
  auto col = [&](const std::string& name) {
    const int c = t.column_index(name);
    if (c < 0) throw DataError((dir / "detail.csv").string() + ": missing column " + name);
    return c;
  };
  const auto ycols = control_columns(grid);
  for (int r = 0; r < t.rows(); ++r) {
    InstanceResult d;
    d.timestamp = t.timestamps[r];
    d.p_loss_oracle = t.values(r, col("p_loss_oracle"));
    d.pf_converged = t.values(r, col("pf_converged")) != 0.0;
    d.p_loss_pred = t.values(r, col("p_loss_pred"));
    d.feasible = t.values(r, col("feasible")) != 0.0;
    d.feasible_relaxed = t.values(r, col("feasible_relaxed")) != 0.0;
    d.max_violation = t.values(r, col("max_violation"));
    for (double rho : m.sweep) d.feasible_sweep.push_back(t.values(r, col(sweep_column(rho))) != 0.0);
    d.y_star = ControlVector::zeros(grid);
    d.y_pred = ControlVector::zeros(grid);
    for (const auto& c : ycols) {
      const auto key = *ColumnKey::parse(c);
      const int target = locate(grid, key)->column;
      d.y_star.values(key.bus, target) = t.values(r, col("true_" + c));
      d.y_pred.values(key.bus, target) = t.values(r, col("pred_" + c));
    }
    m.detail.push_back(std::move(d));
  }
  aggregate(m, grid);
  return m;
}

// ---------------------------------------------------------------------------
// Plots

namespace {

std::string svg_chart(const std::string& title, const std::string& unit, const std::vector<double>& truth,
                      const std::vector<double>& pred) {
  const double w = 640, h = 360, left = 70, right = 20, top = 40, bottom = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&truth, &pred})
    for (double x : *v)
      if (std::isfinite(x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
  if (!(lo <= hi)) lo = hi = 0.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double n = static_cast<double>(std::max<std::size_t>(truth.size(), 2) - 1);
  auto px = [&](std::size_t k) { return left + (w - left - right) * static_cast<double>(k) / n; };
  auto py = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto line = [&](const std::vector<double>& v, const char* colour) {
    std::string pts;
    for (std::size_t k = 0; k < v.size(); ++k)
      if (std::isfinite(v[k])) pts += fmt(px(k)) + "," + fmt(py(v[k])) + " ";
    return "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
  };
  auto label = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
    << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w - left - right << "\" height=\""
    << h - top - bottom << "\" fill=\"none\" stroke=\"#888\"/>\n"
    << "<text x=\"4\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << label(hi) << "</text>\n"
    << "<text x=\"4\" y=\"" << h - bottom << "\" font-family=\"sans-serif\" font-size=\"11\">" << label(lo)
    << "</text>\n"
    << "<text x=\"4\" y=\"" << (h - bottom + top) / 2 << "\" font-family=\"sans-serif\" font-size=\"11\">" << unit
    << "</text>\n"
    << "<text x=\"" << w / 2 << "\" y=\"" << h - 15
    << "\" font-family=\"sans-serif\" font-size=\"11\">instance (sorted by optimal value)</text>\n"
    << line(truth, "black") << line(pred, "#d62728")
    << "<text x=\"" << w - 160 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\" fill=\"black\">optimal</text>\n"
    << "<text x=\"" << w - 90 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">predicted</text>\n"
    << "</svg>\n";
  return s.str();
}

}  // namespace

std::vector<std::filesystem::path> emit_comparison_plots(const Metrics& m, const Grid& grid,
                                                         const std::vector<std::string>& selection,
                                                         const std::filesystem::path& dir) {
  if (m.detail.empty()) throw DataError("no per-instance detail to plot");
  std::vector<std::string> columns = selection.empty() ? control_columns(grid) : selection;
  std::vector<std::pair<std::string, ColumnTarget>> targets;
  std::vector<BusId> buses;
  for (const auto& c : columns) {
    const auto key = ColumnKey::parse(c);
    const auto target = key ? locate(grid, *key) : std::nullopt;
    if (!target || !target->control) throw ConfigError("unknown control column '" + c + "'");
    targets.emplace_back(c, *target);
    buses.push_back(key->bus);
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& [name, target] = targets[k];
    const double scale = target.column == kCompQ ? m.base_mva : 1.0;
    std::vector<std::size_t> order(m.detail.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto truth_of = [&](std::size_t i) { return m.detail[i].y_star.values(buses[k], target.column) * scale; };
    auto pred_of = [&](std::size_t i) { return m.detail[i].y_pred.values(buses[k], target.column) * scale; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return truth_of(a) < truth_of(b); });
    std::vector<double> truth, pred;
    const auto csv = dir / ("plot_" + name + ".csv");
    std::ofstream out(csv);
    if (!out) throw ConfigError("cannot write " + csv.string());
    out << "index,truth,prediction\n";
    for (std::size_t i = 0; i < order.size(); ++i) {
      truth.push_back(truth_of(order[i]));
      pred.push_back(pred_of(order[i]));
      out << i << ',' << format_number(truth.back()) << ',' << format_number(pred.back()) << '\n';
    }
    const auto svg = dir / ("plot_" + name + ".svg");
    std::ofstream(svg) << svg_chart(name, target.column == kCompQ ? "MVar" : "p.u.", truth, pred);
    written.push_back(csv);
    written.push_back(svg);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "--";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Small errors in scientific notation, errors of one unit or more in fixed point.
std::string error_cell(double v) {
  if (!std::isfinite(v)) return "--";
  if (std::abs(v) >= 1.0) return fixed(v, 2);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Width counts code points so the ± sign does not skew the layout.
  std::size_t chars = 0;
  for (unsigned char c : s) chars += (c & 0xC0) != 0x80;
  return s + std::string(width > chars ? width - chars : 0, ' ');
}

}  // namespace

std::string report_table(const std::vector<Regime>& regimes) {
  std::ostringstream out;
  const std::size_t w0 = 12, w1 = 18, w2 = 8, w3 = 9, w4 = 10;
  out << pad("Model", w0) << pad("Losses", w1) << pad("Feas.", w2) << pad("Feas.*", w3) << pad("MAE_v", w4)
      << "MAE_q\n";
  out << pad("", w0) << pad("[% rel. oracle]", w1) << pad("[% of instances]", w2 + w3) << pad("[p.u.]", w4)
      << "[MVar]\n";
  for (const auto& regime : regimes) {
    double rho = regime.rows.empty() ? 0.018 : regime.rows.front().rho;
    out << regime.name << "  (Feas.* at " << fixed(100.0 * rho, 1) << "% relaxation)\n";
    for (const auto& m : regime.rows) {
      const std::string losses = fixed(m.loss_gap_mean, 2) + " ± " + fixed(m.loss_gap_std, 2);
      out << pad("  " + m.label, w0) << pad(losses, w1) << pad(fixed(m.feas_pct, 1), w2)
          << pad(fixed(m.feas_relaxed_pct, 1), w3) << pad(m.oracle ? "--" : error_cell(m.mae_v), w4)
          << (m.oracle ? "--" : error_cell(m.mae_q)) << '\n';
    }
  }
  return out.str();
}

json report_json(const std::vector<Regime>& regimes) {
  json out = json::array();
  for (const auto& r : regimes) {
    json rows = json::array();
    for (const auto& m : r.rows) rows.push_back(summary_json(m));
    out.push_back({{"regime", r.name}, {"rows", rows}});
  }
  return {{"regimes", out}};
}

}  // namespace l2d::eval
