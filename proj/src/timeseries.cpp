#include "l2d/timeseries.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace l2d {

namespace chrono = std::chrono;

Timestamp parse_timestamp(const std::string& text) {
  int y, mo, d, h, mi, s;
  char sep;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s,
                  &consumed) != 7 ||
      (sep != 'T' && sep != ' ')) {
    throw DataError("malformed timestamp '" + text + "'");
  }
  const std::string rest = text.substr(consumed);
  if (!(rest.empty() || rest == "Z")) throw DataError("malformed timestamp '" + text + "'");
  const chrono::year_month_day date{chrono::year{y}, chrono::month{static_cast<unsigned>(mo)},
                                    chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59)
    throw DataError("timestamp out of range '" + text + "'");
  const auto days = chrono::sys_days{date}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(Timestamp ts) {
  Timestamp days = ts / 86400, secs = ts % 86400;
  if (secs < 0) {
    secs += 86400;
    --days;
  }
  const chrono::year_month_day date{chrono::sys_days{chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                static_cast<int>(secs / 3600), static_cast<int>(secs / 60 % 60),
                static_cast<int>(secs % 60));
  return buf;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string ColumnKey::name() const {
  return element + "_" + std::to_string(bus) + "_" + quantity;
}

std::optional<ColumnKey> ColumnKey::parse(const std::string& header) {
  const auto a = header.find('_');
  if (a == std::string::npos) return std::nullopt;
  const auto b = header.find('_', a + 1);
  if (b == std::string::npos) return std::nullopt;
  ColumnKey key;
  key.element = header.substr(0, a);
  const std::string bus = header.substr(a + 1, b - a - 1);
  key.quantity = header.substr(b + 1);
  int id = 0;
  const auto res = std::from_chars(bus.data(), bus.data() + bus.size(), id);
  if (bus.empty() || res.ec != std::errc{} || res.ptr != bus.data() + bus.size()) return std::nullopt;
  key.bus = id;
  const auto& e = key.element;
  const auto& q = key.quantity;
  const bool valid = ((e == "load" || e == "sgen") && (q == "p" || q == "q")) ||
                     (e == "vgen" && (q == "p" || q == "vset")) || (e == "comp" && q == "q");
  if (!valid) return std::nullopt;
  return key;
}

std::optional<ColumnTarget> locate(const Grid& grid, const ColumnKey& key) {
  if (key.bus < 0 || key.bus >= grid.bus_count()) return std::nullopt;
  const BoolMatrix xmask = input_mask(grid);
  const BoolMatrix ymask = control_mask(grid);
  auto input = [&](int col) -> std::optional<ColumnTarget> {
    if (!xmask(key.bus, col)) return std::nullopt;
    return ColumnTarget{false, col};
  };
  auto control = [&](int col) -> std::optional<ColumnTarget> {
    if (!ymask(key.bus, col)) return std::nullopt;
    return ColumnTarget{true, col};
  };
  if (key.element == "load") return input(key.quantity == "p" ? kLoadP : kLoadQ);
  if (key.element == "sgen") return input(key.quantity == "p" ? kStatP : kStatQ);
  if (key.element == "vgen") return key.quantity == "p" ? input(kVoltP) : control(kVset);
  if (key.element == "comp") return control(kCompQ);
  return std::nullopt;
}

int TimeSeriesTable::column_index(const std::string& name) const {
  for (std::size_t k = 0; k < columns.size(); ++k)
    if (columns[k] == name) return static_cast<int>(k);
  return -1;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_cell(const std::string& raw, const std::string& where) {
  const std::string cell = trim(raw);
  if (cell.empty() || cell == "nan" || cell == "NaN") return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
    throw DataError(where + ": not a number '" + cell + "'");
  return value;
}

}  // namespace

BatchFile read_batch_file(const std::filesystem::path& path,
                          const std::vector<std::string>& text_columns) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  BatchFile file;
  bool have_units = false;
  std::string line;
  int lineno = 0;
  std::vector<std::vector<double>> rows;
  std::vector<int> text_slot;  // per header cell: index into file.text or -1
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      if (body.rfind("units:", 0) == 0) {
        have_units = true;
        for (const auto& item : split(body.substr(6), ',')) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) continue;
          file.units[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
        }
      } else {
        file.preamble.push_back(body);
      }
      continue;
    }
    const auto cells = split(line, ',');
    if (file.table.columns.empty()) {
      if (cells.empty() || trim(cells[0]) != "timestamp")
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": header must start with 'timestamp'");
      text_slot.assign(cells.size(), -1);
      for (std::size_t k = 1; k < cells.size(); ++k) {
        const auto name = trim(cells[k]);
        if (std::find(text_columns.begin(), text_columns.end(), name) != text_columns.end()) {
          text_slot[k] = static_cast<int>(file.text_columns.size());
          file.text_columns.push_back(name);
          file.text.emplace_back();
        } else {
          file.table.columns.push_back(name);
        }
      }
      continue;
    }
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != text_slot.size())
      throw DataError(where + ": expected " + std::to_string(text_slot.size()) + " cells");
    file.table.timestamps.push_back(parse_timestamp(trim(cells[0])));
    std::vector<double> row;
    for (std::size_t k = 1; k < cells.size(); ++k) {
      if (text_slot[k] >= 0) file.text[text_slot[k]].push_back(trim(cells[k]));
      else row.push_back(parse_cell(cells[k], where));
    }
    rows.push_back(std::move(row));
  }
  if (!have_units) throw DataError(path.string() + ": unit preamble missing");
  if (text_slot.empty()) throw DataError(path.string() + ": missing header row");
  file.table.values.resize(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(file.table.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) file.table.values(r, c) = rows[r][c];
  return file;
}

void write_batch_file(const std::filesystem::path& path, const BatchFile& file) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "# units: ";
  bool first = true;
  for (const auto& [quantity, unit] : file.units) {
    out << (first ? "" : ", ") << quantity << '=' << unit;
    first = false;
  }
  out << '\n';
  for (const auto& line : file.preamble) out << "# " << line << '\n';
  out << "timestamp";
  for (const auto& c : file.table.columns) out << ',' << c;
  for (const auto& c : file.text_columns) out << ',' << c;
  out << '\n';
  const auto& t = file.table;
  for (int r = 0; r < t.rows(); ++r) {
    out << format_timestamp(t.timestamps[r]);
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) out << ',' << format_number(t.values(r, c));
    for (const auto& column : file.text) out << ',' << column[r];
    out << '\n';
  }
}

double unit_scale(const std::string& unit, double base_mva) {
  if (unit == "MW" || unit == "MVar" || unit == "MVA") return 1.0 / base_mva;
  if (unit == "pu" || unit == "p.u.") return 1.0;
  throw DataError("unknown unit '" + unit + "'");
}

InputVector input_at(const Grid& grid, const TimeSeriesTable& table, int row) {
  InputVector x = InputVector::zeros(grid);
  x.timestamp = table.timestamps[row];
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const auto key = ColumnKey::parse(table.columns[c]);
    if (!key) continue;
    const auto target = locate(grid, *key);
    if (target && !target->control) x.values(key->bus, target->column) = table.values(row, c);
  }
  return x;
}

std::vector<std::string> input_columns(const Grid& grid) {
  const BoolMatrix m = input_mask(grid);
  std::vector<std::string> cols;
  for (int i = 0; i < grid.bus_count(); ++i) {
    const auto id = std::to_string(i);
    if (m(i, kLoadP)) cols.insert(cols.end(), {"load_" + id + "_p", "load_" + id + "_q"});
    if (m(i, kStatP)) cols.insert(cols.end(), {"sgen_" + id + "_p", "sgen_" + id + "_q"});
    if (m(i, kVoltP)) cols.push_back("vgen_" + id + "_p");
  }
  return cols;
}

std::vector<std::string> control_columns(const Grid& grid) {
  const BoolMatrix m = control_mask(grid);
  std::vector<std::string> cols;
  for (int i = 0; i < grid.bus_count(); ++i) {
    if (m(i, kVset)) cols.push_back("vgen_" + std::to_string(i) + "_vset");
    if (m(i, kCompQ)) cols.push_back("comp_" + std::to_string(i) + "_q");
  }
  return cols;
}

void write_inputs(const std::filesystem::path& path, const Grid& grid,
                  const std::vector<InputVector>& inputs) {
  BatchFile file;
  file.units = {{"p", "pu"}, {"q", "pu"}};
  file.preamble.push_back("base_mva: " + format_number(grid.base_mva));
  file.table.columns = input_columns(grid);
  file.table.values.resize(static_cast<Eigen::Index>(inputs.size()),
                           static_cast<Eigen::Index>(file.table.columns.size()));
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    file.table.timestamps.push_back(inputs[r].timestamp.value_or(0));
    for (std::size_t c = 0; c < file.table.columns.size(); ++c) {
      const auto key = *ColumnKey::parse(file.table.columns[c]);
      file.table.values(r, c) = inputs[r].values(key.bus, locate(grid, key)->column);
    }
  }
  write_batch_file(path, file);
}

std::vector<InputVector> read_inputs(const std::filesystem::path& path, const Grid& grid) {
  BatchFile file = read_batch_file(path);
  std::vector<double> scale;
  for (const auto& name : file.table.columns) {
    const auto key = ColumnKey::parse(name);
    if (!key) throw DataError(path.string() + ": unknown column '" + name + "'");
    if (!locate(grid, *key)) throw DataError(path.string() + ": column '" + name + "' has no grid element");
    const auto unit = file.units.find(key->quantity);
    if (unit == file.units.end())
      throw DataError(path.string() + ": no unit declared for '" + key->quantity + "'");
    scale.push_back(unit_scale(unit->second, grid.base_mva));
  }
  for (Eigen::Index c = 0; c < file.table.values.cols(); ++c)
    if (scale[c] != 1.0) file.table.values.col(c) *= scale[c];
  std::vector<InputVector> out;
  for (int r = 0; r < file.table.rows(); ++r) {
    if (!file.table.values.row(r).allFinite())
      throw DataError(path.string() + ": missing value at " + format_timestamp(file.table.timestamps[r]));
    out.push_back(input_at(grid, file.table, r));
  }
  return out;
}

}  // namespace l2d
