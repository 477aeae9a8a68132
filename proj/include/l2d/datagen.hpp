#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "l2d/orpd.hpp"
#include "l2d/timeseries.hpp"

namespace l2d {

// ---------------------------------------------------------------------------
// Ingestion

struct IngestReport {
  std::vector<std::string> unmapped_columns;
  int off_hour_rows = 0;      // rows not on an exact hour, per source combined
  int gap_rows = 0;           // hourly rows with a missing cell
  int unmatched_timestamps = 0;  // hourly stamps present in only one source
  std::vector<std::string> warnings;
};

struct IngestResult {
  TimeSeriesTable table;  // per-unit, aligned, gap-free
  IngestReport report;
};

/// Aligns a generation file and a load file on shared hourly timestamps and
/// converts both to per-unit on the grid base. Columns that do not follow the
/// naming convention are dropped and reported; a conventional column naming an
/// element the grid lacks is an error.
IngestResult ingest_timeseries(const std::filesystem::path& generation_file,
                               const std::filesystem::path& load_file, const Grid& grid);

/// Column-wise arithmetic mean of the table, as an input vector.
InputVector nominal_profile(const Grid& grid, const TimeSeriesTable& table);

/// Draws every entry independently and uniformly between nominal*(1-spread)
/// and nominal*(1+spread). Zero entries stay zero. Rows get hourly timestamps
/// starting at `first`.
std::vector<InputVector> sample_synthetic(const InputVector& nominal, int count, double spread,
                                          std::uint64_t seed, Timestamp first = 946684800);

// ---------------------------------------------------------------------------
// Labelled data

enum class SplitTag { none, train, val, test };
const char* to_string(SplitTag tag) noexcept;
SplitTag parse_split_tag(const std::string& text);

struct LabeledRow {
  Timestamp timestamp = 0;
  InputVector x;
  ControlVector y_star;  // zero when not converged
  bool converged = false;
  double p_loss_star = 0.0;
  SplitTag split = SplitTag::none;
  std::string note;  // solver remark for non-converged rows; not serialized
};

/// Target normalization per output column (setpoint, compensator injection),
/// computed over masked entries of the training rows.
struct NormStats {
  std::array<double, kControlColumns> mean{0.0, 0.0};
  std::array<double, kControlColumns> stddev{1.0, 1.0};
  int train_rows = 0;

  bool operator==(const NormStats&) const = default;
};

struct LabeledDataset {
  std::vector<LabeledRow> rows;
  NormStats norm;

  std::vector<const LabeledRow*> select(SplitTag tag) const;
  double converged_fraction() const;
};

struct LabelOptions {
  OrpdOptions orpd;
  int workers = 1;
};

/// Solves the ORPD for every input. Rows are distributed over a worker pool and
/// gathered in input order.
LabeledDataset label_dataset(const Grid& grid, const std::vector<InputVector>& inputs,
                             const LabelOptions& options = {});

enum class SplitScheme { chronological, random };
SplitScheme parse_split_scheme(const std::string& text);

/// Tags converged rows train/val/test and recomputes the normalization from the
/// training block. Non-converged rows are tagged none. Throws ConfigError for
/// bad fractions or an empty block.
void split(LabeledDataset& dataset, SplitScheme scheme, std::array<double, 3> fractions,
           std::uint64_t seed);

NormStats compute_norm_stats(const LabeledDataset& dataset);

/// Dataset table (X columns, Y* columns, converged, p_loss_star, split) plus a
/// JSON sidecar with the normalization statistics.
void write_dataset(const std::filesystem::path& path, const Grid& grid, const LabeledDataset& data);
LabeledDataset read_dataset(const std::filesystem::path& path, const Grid& grid);
std::filesystem::path stats_sidecar(const std::filesystem::path& dataset_path);

/// Lists non-converged rows, one timestamp per line with the solver note.
void write_drop_manifest(const std::filesystem::path& path, const LabeledDataset& data);

// ---------------------------------------------------------------------------
// Statistics

enum class Season { summer, autumn, winter, spring };
/// Meteorological seasons, southern-hemisphere convention (DJF is summer).
Season season_of(Timestamp ts);
const char* to_string(Season s) noexcept;

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;
};

struct ColumnStats {
  std::string column;
  Histogram histogram;
  /// Mean per season (rows) and hour of day (columns); NaN where no data.
  Eigen::Matrix<double, 4, 24> season_hour;
};

struct StatReport {
  std::vector<ColumnStats> columns;
};

StatReport dataset_stats(const TimeSeriesTable& table, int bins);
/// Writes hist_<column>.csv and season_hour_<column>.csv for every column.
void emit_stats(const StatReport& report, const std::filesystem::path& dir);

}  // namespace l2d
