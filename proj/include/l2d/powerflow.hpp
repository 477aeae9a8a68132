#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "l2d/grid.hpp"

namespace l2d {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using ComplexVector = Eigen::VectorXcd;

/// Seconds since the Unix epoch (UTC).
using Timestamp = std::int64_t;

/// Column layout of the per-bus input matrix.
enum InputColumn : int { kLoadP = 0, kLoadQ = 1, kStatP = 2, kStatQ = 3, kVoltP = 4 };
inline constexpr int kInputColumns = 5;

/// Column layout of the per-bus control matrix.
enum ControlColumn : int { kVset = 0, kCompQ = 1 };
inline constexpr int kControlColumns = 2;

/// N x 5 exogenous injections in per-unit; zero where the element is absent.
struct InputVector {
  Matrix values;
  std::optional<Timestamp> timestamp;

  static InputVector zeros(const Grid& grid);
  bool operator==(const InputVector&) const = default;
};

/// N x 2 controls (voltage setpoint, compensator reactive injection).
struct ControlVector {
  Matrix values;
  BoolMatrix mask;

  /// Zero-valued controls with the grid's mask.
  static ControlVector zeros(const Grid& grid);
  bool operator==(const ControlVector&) const = default;
};

/// Which input entries exist on the grid (N x 5).
BoolMatrix input_mask(const Grid& grid);
/// Which control entries exist on the grid (N x 2).
BoolMatrix control_mask(const Grid& grid);

/// Throws DataError unless x and y have the grid's dimensions and y the grid's mask.
void check_dimensions(const Grid& grid, const InputVector& x, const ControlVector& y);

struct LineFlow {
  Complex from_to;  // s_{i->j}
  Complex to_from;  // s_{j->i}
};

/// Directed flows per line, evaluated with the pi-model/tap coefficients.
std::vector<LineFlow> line_flows(const Grid& grid, const ComplexVector& voltages);
/// Total active losses: sum of Re(s_ij + s_ji) over lines.
double total_losses(const std::vector<LineFlow>& flows);

struct PFOptions {
  double tolerance = 1e-8;
  int max_iter = 30;
};

enum class PFStatus { converged, max_iterations, singular_jacobian, diverged };
const char* to_string(PFStatus status) noexcept;

struct PFSolution {
  ComplexVector voltages;
  std::vector<LineFlow> flows;
  /// Reactive output of each VoltGenerator, indexed like Grid::volt_gens.
  std::vector<double> gen_q;
  double slack_p = 0.0;
  double p_loss = 0.0;
  bool converged = false;
  PFStatus status = PFStatus::max_iterations;
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Newton-Raphson power flow in polar coordinates.
///
/// Unknowns are the angles of all non-slack buses and the magnitudes of buses
/// without a voltage-controlling generator. Generator buses hold |v| = vset;
/// reactive limits are not enforced here. The slack fixes angle 0 and absorbs
/// the active balance; its input p_gvolt entry is ignored.
class PowerFlowProblem {
public:
  PowerFlowProblem(const Grid& grid, const InputVector& x, const ControlVector& y);

  int state_size() const { return static_cast<int>(pvpq_.size() + pq_.size()); }
  /// Flat start: angles 0, PQ magnitudes 1.
  Vector initial_state() const;
  ComplexVector voltages(const Vector& state) const;
  /// Active mismatch at non-slack buses followed by reactive mismatch at PQ buses.
  Vector mismatch(const Vector& state) const;
  Matrix jacobian(const Vector& state) const;

  /// Complex power leaving each bus into the network, S = V (Y V)^*.
  ComplexVector injections(const ComplexVector& v) const;
  const Eigen::MatrixXcd& admittance() const { return ybus_; }
  /// Specified net injection per bus (unknown parts zeroed).
  const ComplexVector& specified() const { return spec_; }

private:
  const Grid& grid_;
  Eigen::MatrixXcd ybus_;
  ComplexVector spec_;
  Vector vm_;  // magnitudes fixed by setpoints (flat 1.0 elsewhere)
  std::vector<int> pvpq_;
  std::vector<int> pq_;
};

PFSolution solve_pf(const Grid& grid, const InputVector& x, const ControlVector& y,
                    const PFOptions& options = {});

/// Infinity norm of the nodal balance re-evaluated from line flows, using the
/// solution's recovered generator reactive outputs and slack active power.
double balance_residual(const Grid& grid, const InputVector& x, const ControlVector& y,
                        const PFSolution& sol);

enum class ConstraintKind {
  voltage_bound,
  angle_difference,
  setpoint_tracking,
  flow_limit,
  volt_gen_reactive,
  compensator_reactive,
};
const char* to_string(ConstraintKind kind) noexcept;

struct ConstraintEntry {
  ConstraintKind kind;
  int element = 0;      // bus id, line index, or generator/compensator index
  bool upper = true;    // which side of a two-sided bound
  double value = 0.0;
  double bound = 0.0;   // after relaxation
  double violation = 0.0;  // signed; positive means the bound is exceeded
};

inline constexpr double kFeasibilityTolerance = 1e-6;

struct ConstraintReport {
  std::vector<ConstraintEntry> entries;
  double relaxation = 0.0;
  double tolerance = kFeasibilityTolerance;
  bool feasible = true;

  double max_violation() const;
  std::vector<ConstraintEntry> violations() const;
};

/// Upper bounds grow by a factor (1 + rho) in magnitude away from the feasible
/// side; lower bounds move down symmetrically.
double relax_upper(double bound, double rho);
double relax_lower(double bound, double rho);

/// Evaluates every operating constraint on a converged solution. An entry is
/// violated when its signed violation exceeds `tolerance`. Throws
/// NumericalError for a non-converged solution.
ConstraintReport check_constraints(const Grid& grid, const InputVector& x,
                                   const ControlVector& y, const PFSolution& sol,
                                   double relaxation = 0.0,
                                   double tolerance = kFeasibilityTolerance);

}  // namespace l2d
