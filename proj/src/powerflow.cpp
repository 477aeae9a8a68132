#include "l2d/powerflow.hpp"

#include <cmath>
#include <limits>

namespace l2d {

InputVector InputVector::zeros(const Grid& grid) {
  return {Matrix::Zero(grid.bus_count(), kInputColumns), std::nullopt};
}

ControlVector ControlVector::zeros(const Grid& grid) {
  return {Matrix::Zero(grid.bus_count(), kControlColumns), control_mask(grid)};
}

BoolMatrix input_mask(const Grid& grid) {
  BoolMatrix mask = BoolMatrix::Constant(grid.bus_count(), kInputColumns, false);
  for (const auto& l : grid.loads) mask(l.bus, kLoadP) = mask(l.bus, kLoadQ) = true;
  for (const auto& g : grid.stat_gens) mask(g.bus, kStatP) = mask(g.bus, kStatQ) = true;
  for (const auto& g : grid.volt_gens) mask(g.bus, kVoltP) = true;
  return mask;
}

BoolMatrix control_mask(const Grid& grid) {
  BoolMatrix mask = BoolMatrix::Constant(grid.bus_count(), kControlColumns, false);
  for (const auto& g : grid.volt_gens) mask(g.bus, kVset) = true;
  for (const auto& c : grid.compensators) mask(c.bus, kCompQ) = true;
  return mask;
}

void check_dimensions(const Grid& grid, const InputVector& x, const ControlVector& y) {
  const int n = grid.bus_count();
  if (x.values.rows() != n || x.values.cols() != kInputColumns)
    throw DataError("input matrix must be " + std::to_string(n) + "x5");
  if (y.values.rows() != n || y.values.cols() != kControlColumns)
    throw DataError("control matrix must be " + std::to_string(n) + "x2");
  if (y.mask != control_mask(grid)) throw DataError("control mask does not match the grid");
  const BoolMatrix xmask = input_mask(grid);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < kInputColumns; ++c) {
      if (!xmask(i, c) && x.values(i, c) != 0.0)
        throw DataError("input entry (" + std::to_string(i) + ", " + std::to_string(c) +
                        ") is set but the bus has no such element");
    }
    for (int c = 0; c < kControlColumns; ++c) {
      if (!y.mask(i, c) && y.values(i, c) != 0.0)
        throw DataError("control entry (" + std::to_string(i) + ", " + std::to_string(c) +
                        ") is set but not defined on the grid");
    }
  }
}

std::vector<LineFlow> line_flows(const Grid& grid, const ComplexVector& v) {
  const auto view = line_admittance_view(grid);
  std::vector<LineFlow> flows(grid.lines.size());
  for (std::size_t k = 0; k < grid.lines.size(); ++k) {
    const auto& line = grid.lines[k];
    const auto& c = view[k];
    const Complex vi = v[line.from_bus], vj = v[line.to_bus];
    flows[k].from_to = vi * std::conj(vi) * c.shunt_from + vi * std::conj(vi - vj) * c.series_from;
    flows[k].to_from = vj * std::conj(vj) * c.shunt_to + vj * std::conj(vj - vi) * c.series_to;
  }
  return flows;
}

double total_losses(const std::vector<LineFlow>& flows) {
  double loss = 0.0;
  for (const auto& f : flows) loss += (f.from_to + f.to_from).real();
  return loss;
}

const char* to_string(PFStatus status) noexcept {
  switch (status) {
    case PFStatus::converged: return "converged";
    case PFStatus::max_iterations: return "max_iterations";
    case PFStatus::singular_jacobian: return "singular_jacobian";
    case PFStatus::diverged: return "diverged";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

PowerFlowProblem::PowerFlowProblem(const Grid& grid, const InputVector& x,
                                   const ControlVector& y)
    : grid_(grid) {
  check_dimensions(grid, x, y);
  const int n = grid.bus_count();
  ybus_ = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& line : grid.lines) {
    const double t2 = line.tap_ratio * line.tap_ratio;
    const Complex series = line.y_series / t2;
    const int i = line.from_bus, j = line.to_bus;
    ybus_(i, i) += line.y_shunt_from / t2 + series;
    ybus_(j, j) += line.y_shunt_to / t2 + series;
    ybus_(i, j) -= series;
    ybus_(j, i) -= series;
  }

  const auto& xv = x.values;
  spec_ = ComplexVector::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double p = xv(i, kStatP) + xv(i, kVoltP) - xv(i, kLoadP);
    const double q = xv(i, kStatQ) - xv(i, kLoadQ) + y.values(i, kCompQ);
    spec_[i] = {p, q};
  }
  const BusId slack = grid.slack_bus();
  spec_[slack] -= xv(slack, kVoltP);

  vm_ = Vector::Ones(n);
  std::vector<bool> controlled(n, false);
  for (const auto& g : grid.volt_gens) {
    vm_[g.bus] = y.values(g.bus, kVset);
    controlled[g.bus] = true;
  }
  for (int i = 0; i < n; ++i) {
    if (i != slack) pvpq_.push_back(i);
    if (!controlled[i]) pq_.push_back(i);
  }
}

Vector PowerFlowProblem::initial_state() const {
  Vector state = Vector::Zero(state_size());
  state.tail(pq_.size()).setOnes();
  return state;
}

ComplexVector PowerFlowProblem::voltages(const Vector& state) const {
  const int n = grid_.bus_count();
  Vector va = Vector::Zero(n);
  Vector vm = vm_;
  const int npv = static_cast<int>(pvpq_.size());
  for (int k = 0; k < npv; ++k) va[pvpq_[k]] = state[k];
  for (std::size_t k = 0; k < pq_.size(); ++k) vm[pq_[k]] = state[npv + k];
  ComplexVector v(n);
  for (int i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
  return v;
}

ComplexVector PowerFlowProblem::injections(const ComplexVector& v) const {
  const ComplexVector current = ybus_ * v;
  return v.cwiseProduct(current.conjugate());
}

Vector PowerFlowProblem::mismatch(const Vector& state) const {
  const ComplexVector s = injections(voltages(state)) - spec_;
  const int npv = static_cast<int>(pvpq_.size());
  Vector f(state_size());
  for (int k = 0; k < npv; ++k) f[k] = s[pvpq_[k]].real();
  for (std::size_t k = 0; k < pq_.size(); ++k) f[npv + k] = s[pq_[k]].imag();
  return f;
}

Matrix PowerFlowProblem::jacobian(const Vector& state) const {
  const ComplexVector v = voltages(state);
  const ComplexVector current = ybus_ * v;
  const int n = grid_.bus_count();
  const Complex j(0.0, 1.0);

  // dS/dVa(i,k) = j v_i conj(delta_ik I_i - Y_ik v_k)
  // dS/dVm(i,k) = v_i conj(Y_ik vn_k) + delta_ik conj(I_i) vn_k
  Eigen::MatrixXcd ds_dva(n, n), ds_dvm(n, n);
  for (int k = 0; k < n; ++k) {
    const Complex vn = v[k] / std::abs(v[k]);
    for (int i = 0; i < n; ++i) {
      const Complex yv = ybus_(i, k) * v[k];
      ds_dva(i, k) = j * v[i] * std::conj((i == k ? current[i] : Complex{}) - yv);
      ds_dvm(i, k) = v[i] * std::conj(ybus_(i, k) * vn) + (i == k ? std::conj(current[i]) * vn : Complex{});
    }
  }

  const int npv = static_cast<int>(pvpq_.size());
  const int npq = static_cast<int>(pq_.size());
  Matrix jac(npv + npq, npv + npq);
  for (int r = 0; r < npv; ++r) {
    for (int c = 0; c < npv; ++c) jac(r, c) = ds_dva(pvpq_[r], pvpq_[c]).real();
    for (int c = 0; c < npq; ++c) jac(r, npv + c) = ds_dvm(pvpq_[r], pq_[c]).real();
  }
  for (int r = 0; r < npq; ++r) {
    for (int c = 0; c < npv; ++c) jac(npv + r, c) = ds_dva(pq_[r], pvpq_[c]).imag();
    for (int c = 0; c < npq; ++c) jac(npv + r, npv + c) = ds_dvm(pq_[r], pq_[c]).imag();
  }
  return jac;
}

PFSolution solve_pf(const Grid& grid, const InputVector& x, const ControlVector& y,
                    const PFOptions& options) {
  PowerFlowProblem problem(grid, x, y);
  Vector state = problem.initial_state();
  PFSolution sol;

  for (int it = 0;; ++it) {
    const Vector f = problem.mismatch(state);
    sol.iterations = it;
    sol.residual_norm = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
    if (!std::isfinite(sol.residual_norm) || sol.residual_norm > 1e10) {
      sol.status = PFStatus::diverged;
      break;
    }
    if (sol.residual_norm <= options.tolerance) {
      sol.status = PFStatus::converged;
      break;
    }
    if (it >= options.max_iter) {
      sol.status = PFStatus::max_iterations;
      break;
    }
    Eigen::PartialPivLU<Matrix> lu(problem.jacobian(state));
    if (!(lu.rcond() > 1e-14)) {
      sol.status = PFStatus::singular_jacobian;
      break;
    }
    state -= lu.solve(f);
  }

  sol.converged = sol.status == PFStatus::converged;
  sol.voltages = problem.voltages(state);
  sol.flows = line_flows(grid, sol.voltages);
  sol.p_loss = total_losses(sol.flows);

  const ComplexVector s = problem.injections(sol.voltages);
  const auto& spec = problem.specified();
  sol.gen_q.resize(grid.volt_gens.size());
  for (std::size_t k = 0; k < grid.volt_gens.size(); ++k) {
    const BusId b = grid.volt_gens[k].bus;
    sol.gen_q[k] = s[b].imag() - spec[b].imag();
  }
  const BusId slack = grid.slack_bus();
  sol.slack_p = s[slack].real() - spec[slack].real();
  return sol;
}

double balance_residual(const Grid& grid, const InputVector& x, const ControlVector& y,
                        const PFSolution& sol) {
  const int n = grid.bus_count();
  const auto& xv = x.values;
  ComplexVector net(n);
  for (int i = 0; i < n; ++i) {
    net[i] = {xv(i, kStatP) + xv(i, kVoltP) - xv(i, kLoadP),
              xv(i, kStatQ) - xv(i, kLoadQ) + y.values(i, kCompQ)};
  }
  for (std::size_t k = 0; k < grid.volt_gens.size(); ++k) {
    const auto& g = grid.volt_gens[k];
    net[g.bus] += Complex(0.0, sol.gen_q[k]);
    if (g.is_slack) net[g.bus] += sol.slack_p - xv(g.bus, kVoltP);
  }
  for (std::size_t k = 0; k < grid.lines.size(); ++k) {
    net[grid.lines[k].from_bus] -= sol.flows[k].from_to;
    net[grid.lines[k].to_bus] -= sol.flows[k].to_from;
  }
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    worst = std::max({worst, std::abs(net[i].real()), std::abs(net[i].imag())});
  return worst;
}

// ---------------------------------------------------------------------------

const char* to_string(ConstraintKind kind) noexcept {
  switch (kind) {
    case ConstraintKind::voltage_bound: return "voltage_bound";
    case ConstraintKind::angle_difference: return "angle_difference";
    case ConstraintKind::setpoint_tracking: return "setpoint_tracking";
    case ConstraintKind::flow_limit: return "flow_limit";
    case ConstraintKind::volt_gen_reactive: return "volt_gen_reactive";
    case ConstraintKind::compensator_reactive: return "compensator_reactive";
  }
  return "unknown";
}

double relax_upper(double bound, double rho) {
  return bound >= 0.0 ? bound * (1.0 + rho) : bound * (1.0 - rho);
}

double relax_lower(double bound, double rho) {
  return bound >= 0.0 ? bound * (1.0 - rho) : bound * (1.0 + rho);
}

double ConstraintReport::max_violation() const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& e : entries) worst = std::max(worst, e.violation);
  return entries.empty() ? 0.0 : worst;
}

std::vector<ConstraintEntry> ConstraintReport::violations() const {
  std::vector<ConstraintEntry> out;
  for (const auto& e : entries)
    if (e.violation > tolerance) out.push_back(e);
  return out;
}

ConstraintReport check_constraints(const Grid& grid, const InputVector& x,
                                   const ControlVector& y, const PFSolution& sol,
                                   double relaxation, double tolerance) {
  if (!sol.converged)
    throw NumericalError("constraint check requires a converged power flow");
  check_dimensions(grid, x, y);

  ConstraintReport report;
  report.relaxation = relaxation;
  report.tolerance = tolerance;
  auto& out = report.entries;
  auto two_sided = [&](ConstraintKind kind, int element, double value, double lo, double hi) {
    const double lo_r = relax_lower(lo, relaxation), hi_r = relax_upper(hi, relaxation);
    out.push_back({kind, element, false, value, lo_r, lo_r - value});
    out.push_back({kind, element, true, value, hi_r, value - hi_r});
  };

  for (const auto& bus : grid.buses) {
    two_sided(ConstraintKind::voltage_bound, bus.id, std::abs(sol.voltages[bus.id]),
              bus.v_min_pu, bus.v_max_pu);
  }
  for (std::size_t k = 0; k < grid.lines.size(); ++k) {
    const auto& line = grid.lines[k];
    const int id = static_cast<int>(k);
    const double diff =
        std::arg(sol.voltages[line.from_bus] * std::conj(sol.voltages[line.to_bus]));
    const double widen = relaxation * (line.angle_diff_max_rad - line.angle_diff_min_rad);
    const double lo = line.angle_diff_min_rad - widen, hi = line.angle_diff_max_rad + widen;
    out.push_back({ConstraintKind::angle_difference, id, false, diff, lo, lo - diff});
    out.push_back({ConstraintKind::angle_difference, id, true, diff, hi, diff - hi});

    const double cap = relax_upper(line.s_max_pu, relaxation);
    const double a = std::abs(sol.flows[k].from_to), b = std::abs(sol.flows[k].to_from);
    out.push_back({ConstraintKind::flow_limit, id, true, a, cap, a - cap});
    out.push_back({ConstraintKind::flow_limit, id, true, b, cap, b - cap});
  }
  for (std::size_t k = 0; k < grid.volt_gens.size(); ++k) {
    const auto& g = grid.volt_gens[k];
    const int id = static_cast<int>(k);
    const double vm = std::abs(sol.voltages[g.bus]);
    const double vset = y.values(g.bus, kVset);
    out.push_back({ConstraintKind::setpoint_tracking, id, true, vm, vset, std::abs(vm - vset)});
    two_sided(ConstraintKind::volt_gen_reactive, id, sol.gen_q[k], g.q_min_pu, g.q_max_pu);
  }
  for (std::size_t k = 0; k < grid.compensators.size(); ++k) {
    const auto& c = grid.compensators[k];
    two_sided(ConstraintKind::compensator_reactive, static_cast<int>(k),
              y.values(c.bus, kCompQ), c.q_min_pu, c.q_max_pu);
  }

  report.feasible = true;
  for (const auto& e : out) {
    if (e.violation > tolerance) {
      report.feasible = false;
      break;
    }
  }
  return report;
}

}  // namespace l2d
