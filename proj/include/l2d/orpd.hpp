#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l2d/powerflow.hpp"

namespace l2d {

struct OrpdOptions {
  /// Inner power flows are solved well below the default tolerance so that
  /// central differences of the loss are not dominated by solver noise.
  PFOptions pf{1e-12, 30};
  double fd_step = 1e-6;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  int max_outer = 6;
  int max_inner = 200;
  double stationarity_tol = 1e-6;
  double feasibility_tol = 1e-6;
  /// Random restarts in addition to the box midpoint start.
  int restarts = 0;
  std::uint64_t seed = 0;
  /// Relaxations tried when reporting OrpdSolution::feasible_at.
  std::vector<double> relaxation_ladder{0.0, 0.018, 0.05};
};

struct OrpdSolution {
  ControlVector y_star;
  double p_loss = 0.0;
  std::optional<double> feasible_at;
  bool converged = false;
  int iterations = 0;
  long inner_pf_count = 0;
  double kkt_stationarity = 0.0;
  double max_violation = 0.0;
  /// Best feasible loss after each outer iteration (+inf until one is found).
  std::vector<double> best_history;
  std::string note;
};

/// One scalar control: a voltage setpoint or a compensator injection.
struct ControlSlot {
  BusId bus = 0;
  ControlColumn column = kVset;
  double lower = 0.0;
  double upper = 0.0;

  bool free() const { return upper - lower > 1e-12; }
};

/// All controls of the grid in a fixed order: generators, then compensators.
std::vector<ControlSlot> control_slots(const Grid& grid);

/// Reduced-space loss minimization over the control box. The implicit
/// variables are eliminated by the power flow; operating constraints enter
/// through an augmented Lagrangian and box bounds through projection.
OrpdSolution solve_orpd(const Grid& grid, const InputVector& x, const OrpdOptions& options = {});

/// Exhaustive scan of the control box, `resolution` points per free control.
/// Throws ConfigError above four free controls.
OrpdSolution brute_force_orpd(const Grid& grid, const InputVector& x, int resolution,
                              const OrpdOptions& options = {});

/// Smallest relaxation in the ladder at which y passes the constraint check.
std::optional<double> feasible_at(const Grid& grid, const InputVector& x, const ControlVector& y,
                                  const PFSolution& sol, const std::vector<double>& ladder,
                                  double tolerance);

}  // namespace l2d
