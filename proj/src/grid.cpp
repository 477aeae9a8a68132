#include "l2d/grid.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace l2d {

const char* to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numerical: return "numerical";
  }
  return "unknown";
}

std::size_t Grid::slack_index() const {
  for (std::size_t k = 0; k < volt_gens.size(); ++k) {
    if (volt_gens[k].is_slack) return k;
  }
  throw DataError("grid has no slack generator");
}

std::vector<BusElements> Grid::elements_by_bus() const {
  std::vector<BusElements> table(buses.size());
  for (std::size_t k = 0; k < volt_gens.size(); ++k) table[volt_gens[k].bus].volt_gen = k;
  for (std::size_t k = 0; k < stat_gens.size(); ++k) table[stat_gens[k].bus].stat_gen = k;
  for (std::size_t k = 0; k < loads.size(); ++k) table[loads[k].bus].load = k;
  for (std::size_t k = 0; k < compensators.size(); ++k)
    table[compensators[k].bus].compensator = k;
  return table;
}

double Grid::vset_min(const VoltGenerator& g) const {
  return g.vset_min_pu.value_or(buses[g.bus].v_min_pu);
}

double Grid::vset_max(const VoltGenerator& g) const {
  return g.vset_max_pu.value_or(buses[g.bus].v_max_pu);
}

std::string ValidationReport::summary() const {
  std::ostringstream out;
  for (const auto& v : violations) out << v.path << ": " << v.message << '\n';
  return out.str();
}

namespace {

std::string indexed(const char* list, std::size_t k) {
  return std::string(list) + "[" + std::to_string(k) + "]";
}

bool connected(const Grid& grid) {
  const int n = grid.bus_count();
  if (n == 0) return true;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  int components = n;
  for (const auto& line : grid.lines) {
    int a = find(line.from_bus), b = find(line.to_bus);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

}  // namespace

ValidationReport validate(const Grid& grid) {
  ValidationReport report;
  auto add = [&](std::string path, std::string message) {
    report.violations.push_back({std::move(path), std::move(message)});
  };

  if (!(grid.base_mva > 0.0)) add("base_mva", "must be positive");
  const int n = grid.bus_count();
  if (n == 0) add("buses", "grid has no buses");

  std::vector<int> seen(n, 0);
  for (std::size_t k = 0; k < grid.buses.size(); ++k) {
    const auto& bus = grid.buses[k];
    const auto path = indexed("buses", k);
    if (bus.id < 0 || bus.id >= n) {
      add(path, "id " + std::to_string(bus.id) + " outside [0, " + std::to_string(n) + ")");
    } else if (seen[bus.id]++) {
      add(path, "duplicate bus id " + std::to_string(bus.id));
    }
    if (!(bus.v_min_pu > 0.0)) add(path, "v_min_pu must be positive (bus " + std::to_string(bus.id) + ")");
    if (bus.v_min_pu > bus.v_max_pu)
      add(path, "v_min_pu > v_max_pu at bus " + std::to_string(bus.id));
  }
  const bool ids_dense = std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  auto bus_ok = [&](BusId b) { return b >= 0 && b < n; };

  for (std::size_t k = 0; k < grid.lines.size(); ++k) {
    const auto& line = grid.lines[k];
    const auto path = indexed("lines", k);
    if (!bus_ok(line.from_bus)) add(path, "from references missing bus " + std::to_string(line.from_bus));
    if (!bus_ok(line.to_bus)) add(path, "to references missing bus " + std::to_string(line.to_bus));
    if (line.from_bus == line.to_bus) add(path, "from and to are the same bus");
    if (!(line.tap_ratio > 0.0)) add(path, "tap_ratio must be positive");
    if (!(line.s_max_pu > 0.0)) add(path, "s_max_pu must be positive");
    if (!(line.angle_diff_min_rad <= 0.0 && 0.0 <= line.angle_diff_max_rad))
      add(path, "angle bounds must satisfy min <= 0 <= max");
  }

  std::vector<int> gens(n, 0), loads(n, 0), comps(n, 0);
  int slack_count = 0;
  for (std::size_t k = 0; k < grid.volt_gens.size(); ++k) {
    const auto& g = grid.volt_gens[k];
    const auto path = indexed("volt_gens", k);
    if (!bus_ok(g.bus)) {
      add(path, "references missing bus " + std::to_string(g.bus));
      continue;
    }
    if (gens[g.bus]++) add(path, "second generator on bus " + std::to_string(g.bus));
    if (g.q_min_pu > g.q_max_pu) add(path, "q_min_pu > q_max_pu");
    if (g.is_slack) ++slack_count;
    const double lo = grid.vset_min(g), hi = grid.vset_max(g);
    if (lo > hi) add(path, "vset_min_pu > vset_max_pu");
  }
  if (slack_count == 0) add("volt_gens", "no slack generator");
  if (slack_count > 1) add("volt_gens", "multiple slack generators");

  for (std::size_t k = 0; k < grid.stat_gens.size(); ++k) {
    const auto& g = grid.stat_gens[k];
    const auto path = indexed("stat_gens", k);
    if (!bus_ok(g.bus)) {
      add(path, "references missing bus " + std::to_string(g.bus));
      continue;
    }
    if (gens[g.bus]++) add(path, "second generator on bus " + std::to_string(g.bus));
  }
  for (std::size_t k = 0; k < grid.loads.size(); ++k) {
    const auto& l = grid.loads[k];
    const auto path = indexed("loads", k);
    if (!bus_ok(l.bus)) {
      add(path, "references missing bus " + std::to_string(l.bus));
      continue;
    }
    if (loads[l.bus]++) add(path, "second load on bus " + std::to_string(l.bus));
  }
  for (std::size_t k = 0; k < grid.compensators.size(); ++k) {
    const auto& c = grid.compensators[k];
    const auto path = indexed("compensators", k);
    if (!bus_ok(c.bus)) {
      add(path, "references missing bus " + std::to_string(c.bus));
      continue;
    }
    if (comps[c.bus]++) add(path, "second compensator on bus " + std::to_string(c.bus));
    if (c.q_min_pu > c.q_max_pu) add(path, "q_min_pu > q_max_pu");
  }

  const bool lines_ok = std::all_of(grid.lines.begin(), grid.lines.end(), [&](const Line& l) {
    return bus_ok(l.from_bus) && bus_ok(l.to_bus);
  });
  if (ids_dense && lines_ok && !connected(grid)) add("lines", "network graph is not connected");
  return report;
}

// ---------------------------------------------------------------------------
// JSON schema

namespace {

using nlohmann::json;

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw DataError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(path + "." + key + ": missing field");
  return *it;
}

double number(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number()) throw DataError(path + "." + key + ": expected a number");
  return v.get<double>();
}

int integer(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number_integer()) throw DataError(path + "." + key + ": expected an integer");
  return v.get<int>();
}

Complex admittance(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  const auto sub = path + "." + key;
  return {number(v, "g", sub), number(v, "b", sub)};
}

std::optional<double> optional_number(const json& obj, const std::string& key,
                                      const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw DataError(path + "." + key + ": expected a number");
  return it->get<double>();
}

const json& array(const json& doc, const std::string& key, bool required) {
  static const json empty = json::array();
  auto it = doc.find(key);
  if (it == doc.end()) {
    if (required) throw DataError(key + ": missing field");
    return empty;
  }
  if (!it->is_array()) throw DataError(key + ": expected an array");
  return *it;
}

json admittance_json(Complex y) { return json{{"g", y.real()}, {"b", y.imag()}}; }

}  // namespace

Grid parse_grid_unchecked(const json& doc) {
  if (!doc.is_object()) throw DataError("grid document: expected an object");
  Grid grid;
  grid.base_mva = number(doc, "base_mva", "grid");

  const auto& buses = array(doc, "buses", true);
  for (std::size_t k = 0; k < buses.size(); ++k) {
    const auto path = indexed("buses", k);
    const auto& b = buses[k];
    Bus bus;
    bus.id = integer(b, "id", path);
    const auto& name = field(b, "name", path);
    if (!name.is_string()) throw DataError(path + ".name: expected a string");
    bus.name = name.get<std::string>();
    bus.vn_kv = number(b, "vn_kv", path);
    bus.v_min_pu = number(b, "v_min_pu", path);
    bus.v_max_pu = number(b, "v_max_pu", path);
    grid.buses.push_back(std::move(bus));
  }

  const auto& lines = array(doc, "lines", true);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto path = indexed("lines", k);
    const auto& l = lines[k];
    Line line;
    line.from_bus = integer(l, "from", path);
    line.to_bus = integer(l, "to", path);
    line.y_series = admittance(l, "y_series", path);
    line.y_shunt_from = admittance(l, "y_shunt_from", path);
    line.y_shunt_to = admittance(l, "y_shunt_to", path);
    line.tap_ratio = number(l, "tap_ratio", path);
    line.s_max_pu = number(l, "s_max_pu", path);
    line.angle_diff_min_rad = number(l, "angle_diff_min_rad", path);
    line.angle_diff_max_rad = number(l, "angle_diff_max_rad", path);
    grid.lines.push_back(line);
  }

  const auto& vgens = array(doc, "volt_gens", true);
  for (std::size_t k = 0; k < vgens.size(); ++k) {
    const auto path = indexed("volt_gens", k);
    const auto& g = vgens[k];
    VoltGenerator gen;
    gen.bus = integer(g, "bus", path);
    gen.q_min_pu = number(g, "q_min_pu", path);
    gen.q_max_pu = number(g, "q_max_pu", path);
    const auto& slack = field(g, "is_slack", path);
    if (!slack.is_boolean()) throw DataError(path + ".is_slack: expected a boolean");
    gen.is_slack = slack.get<bool>();
    gen.vset_min_pu = optional_number(g, "vset_min_pu", path);
    gen.vset_max_pu = optional_number(g, "vset_max_pu", path);
    grid.volt_gens.push_back(gen);
  }

  const auto& sgens = array(doc, "stat_gens", false);
  for (std::size_t k = 0; k < sgens.size(); ++k)
    grid.stat_gens.push_back({integer(sgens[k], "bus", indexed("stat_gens", k))});
  const auto& loads = array(doc, "loads", false);
  for (std::size_t k = 0; k < loads.size(); ++k)
    grid.loads.push_back({integer(loads[k], "bus", indexed("loads", k))});
  const auto& comps = array(doc, "compensators", false);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto path = indexed("compensators", k);
    grid.compensators.push_back({integer(comps[k], "bus", path),
                                 number(comps[k], "q_min_pu", path),
                                 number(comps[k], "q_max_pu", path)});
  }

  return grid;
}

Grid parse_grid(const json& doc) {
  Grid grid = parse_grid_unchecked(doc);
  auto report = validate(grid);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    throw DataError("invalid grid: " + first.path + ": " + first.message +
                    (report.violations.size() > 1
                         ? " (+" + std::to_string(report.violations.size() - 1) + " more)"
                         : ""));
  }
  std::sort(grid.buses.begin(), grid.buses.end(),
            [](const Bus& a, const Bus& b) { return a.id < b.id; });
  return grid;
}

Grid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return parse_grid(doc);
}

json to_json(const Grid& grid) {
  json doc;
  doc["base_mva"] = grid.base_mva;
  doc["buses"] = json::array();
  for (const auto& b : grid.buses) {
    doc["buses"].push_back({{"id", b.id}, {"name", b.name}, {"vn_kv", b.vn_kv},
                            {"v_min_pu", b.v_min_pu}, {"v_max_pu", b.v_max_pu}});
  }
  doc["lines"] = json::array();
  for (const auto& l : grid.lines) {
    doc["lines"].push_back({{"from", l.from_bus},
                            {"to", l.to_bus},
                            {"y_series", admittance_json(l.y_series)},
                            {"y_shunt_from", admittance_json(l.y_shunt_from)},
                            {"y_shunt_to", admittance_json(l.y_shunt_to)},
                            {"tap_ratio", l.tap_ratio},
                            {"s_max_pu", l.s_max_pu},
                            {"angle_diff_min_rad", l.angle_diff_min_rad},
                            {"angle_diff_max_rad", l.angle_diff_max_rad}});
  }
  doc["volt_gens"] = json::array();
  for (const auto& g : grid.volt_gens) {
    json item{{"bus", g.bus}, {"q_min_pu", g.q_min_pu}, {"q_max_pu", g.q_max_pu},
              {"is_slack", g.is_slack}};
    if (g.vset_min_pu) item["vset_min_pu"] = *g.vset_min_pu;
    if (g.vset_max_pu) item["vset_max_pu"] = *g.vset_max_pu;
    doc["volt_gens"].push_back(std::move(item));
  }
  doc["stat_gens"] = json::array();
  for (const auto& g : grid.stat_gens) doc["stat_gens"].push_back({{"bus", g.bus}});
  doc["loads"] = json::array();
  for (const auto& l : grid.loads) doc["loads"].push_back({{"bus", l.bus}});
  doc["compensators"] = json::array();
  for (const auto& c : grid.compensators) {
    doc["compensators"].push_back(
        {{"bus", c.bus}, {"q_min_pu", c.q_min_pu}, {"q_max_pu", c.q_max_pu}});
  }
  return doc;
}

void save_grid(const Grid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(grid).dump(2) << '\n';
}

std::vector<LineCoefficients> line_admittance_view(const Grid& grid) {
  std::vector<LineCoefficients> view;
  view.reserve(grid.lines.size());
  for (const auto& line : grid.lines) {
    const double t2 = line.tap_ratio * line.tap_ratio;
    const Complex series = std::conj(line.y_series) / t2;
    view.push_back({std::conj(line.y_shunt_from) / t2, series,
                    std::conj(line.y_shunt_to) / t2, series});
  }
  return view;
}

}  // namespace l2d
