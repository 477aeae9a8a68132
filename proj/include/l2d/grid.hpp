#pragma once

#include <complex>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/error.hpp"

namespace l2d {

using Complex = std::complex<double>;
using BusId = int;

struct Bus {
  BusId id = 0;
  std::string name;
  double vn_kv = 0.0;
  double v_min_pu = 0.9;
  double v_max_pu = 1.1;

  bool operator==(const Bus&) const = default;
};

/// Pi-model branch; a transformer is a line with tap_ratio != 1.
struct Line {
  BusId from_bus = 0;
  BusId to_bus = 0;
  Complex y_series;
  Complex y_shunt_from;
  Complex y_shunt_to;
  double tap_ratio = 1.0;
  double s_max_pu = 1.0;
  double angle_diff_min_rad = -0.5;
  double angle_diff_max_rad = 0.5;

  bool operator==(const Line&) const = default;
};

/// Voltage-controlling generator. The setpoint box defaults to the bus voltage
/// bounds; a degenerate box pins the setpoint (typical for the slack).
struct VoltGenerator {
  BusId bus = 0;
  double q_min_pu = -1.0;
  double q_max_pu = 1.0;
  bool is_slack = false;
  std::optional<double> vset_min_pu;
  std::optional<double> vset_max_pu;

  bool operator==(const VoltGenerator&) const = default;
};

struct StatGenerator {
  BusId bus = 0;
  bool operator==(const StatGenerator&) const = default;
};

struct Load {
  BusId bus = 0;
  bool operator==(const Load&) const = default;
};

struct Compensator {
  BusId bus = 0;
  double q_min_pu = 0.0;
  double q_max_pu = 0.0;

  bool operator==(const Compensator&) const = default;
};

/// Per-bus element lookup. Entries are indices into the Grid element lists.
struct BusElements {
  std::optional<std::size_t> volt_gen;
  std::optional<std::size_t> stat_gen;
  std::optional<std::size_t> load;
  std::optional<std::size_t> compensator;
};

class Grid {
public:
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<VoltGenerator> volt_gens;
  std::vector<StatGenerator> stat_gens;
  std::vector<Load> loads;
  std::vector<Compensator> compensators;

  int bus_count() const { return static_cast<int>(buses.size()); }

  /// Index of the slack generator in volt_gens. Requires a valid grid.
  std::size_t slack_index() const;
  BusId slack_bus() const { return volt_gens[slack_index()].bus; }

  /// Element table indexed by bus id. Requires dense bus ids.
  std::vector<BusElements> elements_by_bus() const;

  double vset_min(const VoltGenerator& g) const;
  double vset_max(const VoltGenerator& g) const;

  bool operator==(const Grid&) const = default;
};

struct Violation {
  std::string path;     // e.g. "lines[3]"
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

/// Lists every invariant violation; empty report iff the grid is valid.
ValidationReport validate(const Grid& grid);

/// Parses and validates a grid document. Throws DataError on schema or
/// semantic violations, naming the offending element path.
Grid parse_grid(const nlohmann::json& document);
/// Schema-level parse only; pair with validate() to list every violation.
Grid parse_grid_unchecked(const nlohmann::json& document);
Grid load_grid(const std::filesystem::path& path);

nlohmann::json to_json(const Grid& grid);
void save_grid(const Grid& grid, const std::filesystem::path& path);

/// Per-unit conversion on a system base.
inline double to_pu(double physical, double base_mva) { return physical / base_mva; }
inline double from_pu(double pu, double base_mva) { return pu * base_mva; }

/// Coefficients for the directed flows of one line:
///   s_from = |v_i|^2 * shunt_from + v_i (v_i - v_j)^* * series_from
///   s_to   = |v_j|^2 * shunt_to   + v_j (v_j - v_i)^* * series_to
/// Every coefficient is the conjugated admittance divided by tap_ratio^2,
/// applied on both ends of the branch.
struct LineCoefficients {
  Complex shunt_from;
  Complex series_from;
  Complex shunt_to;
  Complex series_to;
};

std::vector<LineCoefficients> line_admittance_view(const Grid& grid);

}  // namespace l2d
