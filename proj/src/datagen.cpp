#include "l2d/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "l2d/random.hpp"

namespace l2d {

namespace {

struct Source {
  std::vector<Timestamp> stamps;
  std::vector<std::string> columns;
  Matrix values;  // per-unit
};

Source load_source(const std::filesystem::path& path, const Grid& grid, IngestReport& report) {
  const BatchFile file = read_batch_file(path);
  const auto& t = file.table;
  for (int r = 1; r < t.rows(); ++r)
    if (t.timestamps[r] <= t.timestamps[r - 1])
      throw DataError(path.string() + ": timestamps not strictly increasing at " +
                      format_timestamp(t.timestamps[r]));

  std::vector<int> keep;
  std::vector<double> scale;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const auto key = ColumnKey::parse(t.columns[c]);
    if (!key) {
      report.unmapped_columns.push_back(t.columns[c]);
      continue;
    }
    const auto target = locate(grid, *key);
    if (!target)
      throw DataError(path.string() + ": column '" + t.columns[c] + "' has no grid element");
    if (target->control) {
      report.unmapped_columns.push_back(t.columns[c]);
      continue;
    }
    const auto unit = file.units.find(key->quantity);
    if (unit == file.units.end())
      throw DataError(path.string() + ": no unit declared for '" + key->quantity + "'");
    keep.push_back(static_cast<int>(c));
    scale.push_back(unit_scale(unit->second, grid.base_mva));
  }

  Source src;
  std::vector<int> rows;
  for (int r = 0; r < t.rows(); ++r) {
    if (t.timestamps[r] % 3600 != 0) {
      ++report.off_hour_rows;
      continue;
    }
    rows.push_back(r);
    src.stamps.push_back(t.timestamps[r]);
  }
  for (int c : keep) src.columns.push_back(t.columns[c]);
  src.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < keep.size(); ++k)
      src.values(r, k) = t.values(rows[r], keep[k]) * scale[k];
  return src;
}

}  // namespace

IngestResult ingest_timeseries(const std::filesystem::path& generation_file,
                               const std::filesystem::path& load_file, const Grid& grid) {
  IngestResult result;
  auto& report = result.report;
  const Source gen = load_source(generation_file, grid, report);
  const Source load = load_source(load_file, grid, report);

  auto& table = result.table;
  table.columns = gen.columns;
  table.columns.insert(table.columns.end(), load.columns.begin(), load.columns.end());
  std::vector<std::string> sorted = table.columns;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DataError("column appears in both sources");

  std::vector<std::pair<int, int>> matched;
  std::size_t a = 0, b = 0;
  while (a < gen.stamps.size() && b < load.stamps.size()) {
    if (gen.stamps[a] < load.stamps[b]) {
      ++a;
      ++report.unmatched_timestamps;
    } else if (load.stamps[b] < gen.stamps[a]) {
      ++b;
      ++report.unmatched_timestamps;
    } else {
      matched.emplace_back(static_cast<int>(a++), static_cast<int>(b++));
    }
  }
  report.unmatched_timestamps += static_cast<int>(gen.stamps.size() - a + load.stamps.size() - b);

  const auto width = static_cast<Eigen::Index>(table.columns.size());
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto& [i, j] : matched) {
    Eigen::RowVectorXd row(width);
    row << gen.values.row(i), load.values.row(j);
    if (!row.allFinite()) {
      ++report.gap_rows;
      continue;
    }
    table.timestamps.push_back(gen.stamps[i]);
    rows.push_back(row);
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t r = 0; r < rows.size(); ++r) table.values.row(r) = rows[r];

  if (table.rows() == 0) report.warnings.push_back("no aligned hourly rows");
  if (report.unmatched_timestamps > 0)
    report.warnings.push_back(std::to_string(report.unmatched_timestamps) +
                              " hourly timestamps present in only one source");
  if (report.gap_rows > 0)
    report.warnings.push_back(std::to_string(report.gap_rows) + " rows dropped for missing cells");
  return result;
}

InputVector nominal_profile(const Grid& grid, const TimeSeriesTable& table) {
  if (table.rows() == 0) throw DataError("nominal profile of an empty table");
  TimeSeriesTable mean;
  mean.columns = table.columns;
  mean.timestamps = {table.timestamps.front()};
  mean.values = table.values.colwise().mean();
  InputVector x = input_at(grid, mean, 0);
  x.timestamp.reset();
  return x;
}

std::vector<InputVector> sample_synthetic(const InputVector& nominal, int count, double spread,
                                          std::uint64_t seed, Timestamp first) {
  if (count < 0) throw ConfigError("sample count must be non-negative");
  if (!(spread >= 0.0 && spread < 1.0)) throw ConfigError("spread must lie in [0, 1)");
  Rng rng(seed);
  std::vector<InputVector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    InputVector x = nominal;
    x.timestamp = first + static_cast<Timestamp>(k) * 3600;
    for (Eigen::Index i = 0; i < x.values.rows(); ++i)
      for (Eigen::Index c = 0; c < x.values.cols(); ++c) {
        const double v = nominal.values(i, c);
        if (v == 0.0) continue;
        const double lo = std::min(v * (1 - spread), v * (1 + spread));
        const double hi = std::max(v * (1 - spread), v * (1 + spread));
        x.values(i, c) = std::clamp(lo + (hi - lo) * rng.uniform(), lo, hi);
      }
    out.push_back(std::move(x));
  }
  return out;
}

const char* to_string(SplitTag tag) noexcept {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::none: break;
  }
  return "none";
}

SplitTag parse_split_tag(const std::string& text) {
  if (text == "train") return SplitTag::train;
  if (text == "val") return SplitTag::val;
  if (text == "test") return SplitTag::test;
  if (text == "none" || text.empty()) return SplitTag::none;
  throw DataError("unknown split tag '" + text + "'");
}

std::vector<const LabeledRow*> LabeledDataset::select(SplitTag tag) const {
  std::vector<const LabeledRow*> out;
  for (const auto& r : rows)
    if (r.split == tag) out.push_back(&r);
  return out;
}

double LabeledDataset::converged_fraction() const {
  if (rows.empty()) return 0.0;
  const auto n = std::count_if(rows.begin(), rows.end(), [](const LabeledRow& r) { return r.converged; });
  return static_cast<double>(n) / static_cast<double>(rows.size());
}

LabeledDataset label_dataset(const Grid& grid, const std::vector<InputVector>& inputs,
                             const LabelOptions& options) {
  LabeledDataset data;
  data.rows.resize(inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < inputs.size(); k = next++) {
      const auto sol = solve_orpd(grid, inputs[k], options.orpd);
      LabeledRow& row = data.rows[k];
      row.timestamp = inputs[k].timestamp.value_or(0);
      row.x = inputs[k];
      row.converged = sol.converged;
      if (sol.converged) {
        row.y_star = sol.y_star;
        row.p_loss_star = sol.p_loss;
      } else {
        row.y_star = ControlVector::zeros(grid);
        row.note = sol.note.empty() ? "not converged" : sol.note;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(inputs.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return data;
}

SplitScheme parse_split_scheme(const std::string& text) {
  if (text == "chronological") return SplitScheme::chronological;
  if (text == "random") return SplitScheme::random;
  throw ConfigError("unknown split scheme '" + text + "'");
}

void split(LabeledDataset& dataset, SplitScheme scheme, std::array<double, 3> fractions,
           std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < dataset.rows.size(); ++k)
    if (dataset.rows[k].converged) order.push_back(k);
  const auto n = static_cast<long long>(order.size());
  const long long n_train = std::llround(fractions[0] * static_cast<double>(n));
  const long long n_val = std::llround(fractions[1] * static_cast<double>(n));
  const long long n_test = n - n_train - n_val;
  const char* names[] = {"training", "validation", "test"};
  const long long counts[] = {n_train, n_val, n_test};
  for (int b = 0; b < 3; ++b)
    if (counts[b] <= 0) throw ConfigError(std::string("empty ") + names[b] + " block");

  if (scheme == SplitScheme::chronological) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dataset.rows[a].timestamp < dataset.rows[b].timestamp;
    });
  } else {
    Rng rng(seed);
    rng.shuffle(order);
  }
  for (auto& r : dataset.rows) r.split = SplitTag::none;
  for (long long k = 0; k < n; ++k) {
    auto& row = dataset.rows[order[k]];
    row.split = k < n_train ? SplitTag::train : k < n_train + n_val ? SplitTag::val : SplitTag::test;
  }
  dataset.norm = compute_norm_stats(dataset);
}

NormStats compute_norm_stats(const LabeledDataset& dataset) {
  NormStats s;
  for (int c = 0; c < kControlColumns; ++c) {
    double sum = 0.0, sq = 0.0;
    long count = 0;
    for (const auto& r : dataset.rows) {
      if (r.split != SplitTag::train) continue;
      for (Eigen::Index i = 0; i < r.y_star.values.rows(); ++i)
        if (r.y_star.mask(i, c)) {
          sum += r.y_star.values(i, c);
          ++count;
        }
    }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    for (const auto& r : dataset.rows) {
      if (r.split != SplitTag::train) continue;
      for (Eigen::Index i = 0; i < r.y_star.values.rows(); ++i)
        if (r.y_star.mask(i, c)) sq += (r.y_star.values(i, c) - mean) * (r.y_star.values(i, c) - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    s.mean[c] = mean;
    s.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  for (const auto& r : dataset.rows) s.train_rows += r.split == SplitTag::train;
  return s;
}

std::filesystem::path stats_sidecar(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".stats.json");
  return p;
}

void write_dataset(const std::filesystem::path& path, const Grid& grid, const LabeledDataset& data) {
  const auto xcols = input_columns(grid);
  const auto ycols = control_columns(grid);
  BatchFile file;
  file.units = {{"p", "pu"}, {"q", "pu"}, {"vset", "pu"}};
  file.preamble.push_back("base_mva: " + format_number(grid.base_mva));
  auto& t = file.table;
  t.columns = xcols;
  t.columns.insert(t.columns.end(), ycols.begin(), ycols.end());
  t.columns.push_back("converged");
  t.columns.push_back("p_loss_star");
  file.text_columns = {"split"};
  file.text.resize(1);
  const auto nx = xcols.size(), ny = ycols.size();
  t.values.resize(static_cast<Eigen::Index>(data.rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<BusId, int>> xcell, ycell;
  for (const auto& c : xcols) {
    const auto key = *ColumnKey::parse(c);
    xcell.emplace_back(key.bus, locate(grid, key)->column);
  }
  for (const auto& c : ycols) {
    const auto key = *ColumnKey::parse(c);
    ycell.emplace_back(key.bus, locate(grid, key)->column);
  }
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const auto& row = data.rows[r];
    t.timestamps.push_back(row.timestamp);
    for (std::size_t k = 0; k < nx; ++k) t.values(r, k) = row.x.values(xcell[k].first, xcell[k].second);
    for (std::size_t k = 0; k < ny; ++k)
      t.values(r, nx + k) = row.converged ? row.y_star.values(ycell[k].first, ycell[k].second) : nan;
    t.values(r, nx + ny) = row.converged ? 1.0 : 0.0;
    t.values(r, nx + ny + 1) = row.converged ? row.p_loss_star : nan;
    file.text[0].push_back(to_string(row.split));
  }
  write_batch_file(path, file);

  nlohmann::json stats = {
      {"vset_mean", data.norm.mean[kVset]},   {"vset_std", data.norm.stddev[kVset]},
      {"comp_q_mean", data.norm.mean[kCompQ]}, {"comp_q_std", data.norm.stddev[kCompQ]},
      {"train_rows", data.norm.train_rows},   {"rows", data.rows.size()},
      {"converged_fraction", data.converged_fraction()},
  };
  std::ofstream out(stats_sidecar(path));
  if (!out) throw ConfigError("cannot write " + stats_sidecar(path).string());
  out << stats.dump(2) << '\n';
}

LabeledDataset read_dataset(const std::filesystem::path& path, const Grid& grid) {
  const BatchFile file = read_batch_file(path, {"split"});
  for (const auto& [quantity, unit] : file.units)
    if (unit != "pu") throw DataError(path.string() + ": dataset values must be per-unit");
  const auto& t = file.table;
  const int conv = t.column_index("converged");
  const int loss = t.column_index("p_loss_star");
  if (conv < 0 || loss < 0 || file.text.size() != 1)
    throw DataError(path.string() + ": not a labelled dataset");

  struct Cell {
    int column;
    BusId bus;
    int target;
    bool control;
  };
  std::vector<Cell> cells;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    if (static_cast<int>(c) == conv || static_cast<int>(c) == loss) continue;
    const auto key = ColumnKey::parse(t.columns[c]);
    if (!key) throw DataError(path.string() + ": unknown column '" + t.columns[c] + "'");
    const auto target = locate(grid, *key);
    if (!target) throw DataError(path.string() + ": column '" + t.columns[c] + "' has no grid element");
    cells.push_back({static_cast<int>(c), key->bus, target->column, target->control});
  }

  LabeledDataset data;
  for (int r = 0; r < t.rows(); ++r) {
    LabeledRow row;
    row.timestamp = t.timestamps[r];
    row.x = InputVector::zeros(grid);
    row.x.timestamp = row.timestamp;
    row.y_star = ControlVector::zeros(grid);
    row.converged = t.values(r, conv) != 0.0;
    for (const auto& cell : cells) {
      const double v = t.values(r, cell.column);
      if (cell.control) {
        if (row.converged) row.y_star.values(cell.bus, cell.target) = v;
      } else {
        if (!std::isfinite(v)) throw DataError(path.string() + ": missing input at row " + std::to_string(r));
        row.x.values(cell.bus, cell.target) = v;
      }
    }
    if (row.converged) {
      if (!row.y_star.values.allFinite() || !std::isfinite(t.values(r, loss)))
        throw DataError(path.string() + ": missing label at row " + std::to_string(r));
      row.p_loss_star = t.values(r, loss);
    }
    row.split = parse_split_tag(file.text[0][r]);
    data.rows.push_back(std::move(row));
  }
  data.norm = compute_norm_stats(data);
  return data;
}

void write_drop_manifest(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "timestamp,note\n";
  for (const auto& r : data.rows)
    if (!r.converged) out << format_timestamp(r.timestamp) << ',' << r.note << '\n';
}

Season season_of(Timestamp ts) {
  Timestamp days = ts / 86400;
  if (ts % 86400 < 0) --days;
  const std::chrono::year_month_day date{std::chrono::sys_days{std::chrono::days{days}}};
  const unsigned m = static_cast<unsigned>(date.month());
  if (m == 12 || m <= 2) return Season::summer;
  if (m <= 5) return Season::autumn;
  if (m <= 8) return Season::winter;
  return Season::spring;
}

const char* to_string(Season s) noexcept {
  switch (s) {
    case Season::summer: return "summer";
    case Season::autumn: return "autumn";
    case Season::winter: return "winter";
    case Season::spring: return "spring";
  }
  return "?";
}

StatReport dataset_stats(const TimeSeriesTable& table, int bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  StatReport report;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    ColumnStats cs;
    cs.column = table.columns[c];
    const auto col = table.values.col(static_cast<Eigen::Index>(c));
    cs.histogram.counts.assign(static_cast<std::size_t>(bins), 0);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index r = 0; r < col.size(); ++r)
      if (std::isfinite(col(r))) {
        lo = std::min(lo, col(r));
        hi = std::max(hi, col(r));
      }
    Eigen::Matrix<double, 4, 24> sum = Eigen::Matrix<double, 4, 24>::Zero();
    Eigen::Matrix<double, 4, 24> count = Eigen::Matrix<double, 4, 24>::Zero();
    if (lo <= hi) {
      cs.histogram.lo = lo;
      cs.histogram.hi = hi;
      for (Eigen::Index r = 0; r < col.size(); ++r) {
        const double v = col(r);
        if (!std::isfinite(v)) continue;
        int b = 0;
        if (hi > lo) b = std::min(bins - 1, static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)));
        ++cs.histogram.counts[static_cast<std::size_t>(b)];
        const Timestamp ts = table.timestamps[static_cast<std::size_t>(r)];
        const int hour = static_cast<int>(((ts % 86400) + 86400) % 86400 / 3600);
        const int s = static_cast<int>(season_of(ts));
        sum(s, hour) += v;
        count(s, hour) += 1;
      }
    }
    for (int s = 0; s < 4; ++s)
      for (int h = 0; h < 24; ++h)
        cs.season_hour(s, h) =
            count(s, h) > 0 ? sum(s, h) / count(s, h) : std::numeric_limits<double>::quiet_NaN();
    report.columns.push_back(std::move(cs));
  }
  return report;
}

void emit_stats(const StatReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& cs : report.columns) {
    std::ofstream hist(dir / ("hist_" + cs.column + ".csv"));
    if (!hist) throw ConfigError("cannot write into " + dir.string());
    hist << "bin_lo,bin_hi,count\n";
    const auto& h = cs.histogram;
    const int bins = static_cast<int>(h.counts.size());
    for (int b = 0; b < bins; ++b) {
      const double a = h.lo + (h.hi - h.lo) * b / bins;
      const double z = b + 1 == bins ? h.hi : h.lo + (h.hi - h.lo) * (b + 1) / bins;
      hist << format_number(a) << ',' << format_number(z) << ',' << h.counts[b] << '\n';
    }
    std::ofstream sh(dir / ("season_hour_" + cs.column + ".csv"));
    sh << "hour,summer,autumn,winter,spring\n";
    for (int hour = 0; hour < 24; ++hour) {
      sh << hour;
      for (int s = 0; s < 4; ++s) sh << ',' << format_number(cs.season_hour(s, hour));
      sh << '\n';
    }
  }
}

}  // namespace l2d
