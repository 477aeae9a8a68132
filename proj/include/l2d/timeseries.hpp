#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "l2d/powerflow.hpp"

namespace l2d {

/// Parses "YYYY-MM-DDTHH:MM:SS" (optionally with a trailing 'Z' or a space
/// separator) as UTC. Throws DataError on malformed input.
Timestamp parse_timestamp(const std::string& text);
std::string format_timestamp(Timestamp ts);

/// Shortest decimal text that reads back to the same double.
std::string format_number(double value);

/// A column header of the form `<elem>_<bus>_<quantity>`.
struct ColumnKey {
  std::string element;  // load | sgen | vgen | comp
  BusId bus = 0;
  std::string quantity;  // p | q | vset

  std::string name() const;
  static std::optional<ColumnKey> parse(const std::string& header);
};

/// Where a column lands: an InputVector or ControlVector cell.
struct ColumnTarget {
  bool control = false;
  int column = 0;
};

/// Maps a key onto the grid; nullopt when the grid lacks the element.
std::optional<ColumnTarget> locate(const Grid& grid, const ColumnKey& key);

/// Timestamped real table. Cells may be NaN before alignment.
struct TimeSeriesTable {
  std::vector<Timestamp> timestamps;
  std::vector<std::string> columns;
  Matrix values;  // rows = timestamps

  int rows() const { return static_cast<int>(timestamps.size()); }
  int column_index(const std::string& name) const;
};

/// Columnar text file: `#`-prefixed preamble lines (a `units:` line is
/// required), a header row starting with `timestamp`, then one row per stamp.
struct BatchFile {
  std::map<std::string, std::string> units;  // quantity -> MW | MVar | pu
  std::vector<std::string> preamble;          // other `# key: value` lines
  TimeSeriesTable table;
  /// Non-numeric columns, written after the numeric ones.
  std::vector<std::string> text_columns;
  std::vector<std::vector<std::string>> text;  // [column][row]
};

/// Columns named in `text_columns` are kept as strings instead of numbers.
BatchFile read_batch_file(const std::filesystem::path& path,
                          const std::vector<std::string>& text_columns = {});
void write_batch_file(const std::filesystem::path& path, const BatchFile& file);

/// Multiplier turning a value in `unit` into per-unit.
double unit_scale(const std::string& unit, double base_mva);

/// Builds the input and control cells for one table row; absent columns are zero.
InputVector input_at(const Grid& grid, const TimeSeriesTable& table, int row);

/// Batch file holding one row per input, physical units (MW/MVar).
void write_inputs(const std::filesystem::path& path, const Grid& grid,
                  const std::vector<InputVector>& inputs);
/// Inverse of write_inputs; accepts any unit preamble.
std::vector<InputVector> read_inputs(const std::filesystem::path& path, const Grid& grid);

/// Column names of every defined input/control entry of the grid, in a fixed order.
std::vector<std::string> input_columns(const Grid& grid);
std::vector<std::string> control_columns(const Grid& grid);

}  // namespace l2d
