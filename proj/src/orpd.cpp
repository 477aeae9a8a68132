#include "l2d/orpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "l2d/random.hpp"

namespace l2d {

std::vector<ControlSlot> control_slots(const Grid& grid) {
  std::vector<ControlSlot> slots;
  for (const auto& g : grid.volt_gens)
    slots.push_back({g.bus, kVset, grid.vset_min(g), grid.vset_max(g)});
  for (const auto& c : grid.compensators)
    slots.push_back({c.bus, kCompQ, c.q_min_pu, c.q_max_pu});
  return slots;
}

std::optional<double> feasible_at(const Grid& grid, const InputVector& x, const ControlVector& y,
                                  const PFSolution& sol, const std::vector<double>& ladder,
                                  double tolerance) {
  if (!sol.converged) return std::nullopt;
  for (double rho : ladder) {
    if (check_constraints(grid, x, y, sol, rho, tolerance).feasible) return rho;
  }
  return std::nullopt;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool penalized(ConstraintKind kind) {
  // Box-type controls are handled by projection; tracking holds by construction.
  return kind == ConstraintKind::voltage_bound || kind == ConstraintKind::angle_difference ||
         kind == ConstraintKind::flow_limit || kind == ConstraintKind::volt_gen_reactive;
}

struct Evaluation {
  bool ok = false;
  double loss = 0.0;
  Vector g;  // signed constraint values, feasible when <= 0
  PFSolution sol;
};

/// Maps the free decision vector onto full controls and evaluates the plant.
class ReducedProblem {
public:
  ReducedProblem(const Grid& grid, const InputVector& x, const OrpdOptions& options)
      : grid_(grid), x_(x), options_(options), base_(ControlVector::zeros(grid)) {
    for (const auto& slot : control_slots(grid)) {
      if (slot.free()) {
        free_.push_back(slot);
      } else {
        base_.values(slot.bus, slot.column) = slot.lower;
      }
    }
  }

  int dim() const { return static_cast<int>(free_.size()); }
  const std::vector<ControlSlot>& slots() const { return free_; }
  long pf_count() const { return pf_count_; }

  Vector lower() const {
    Vector v(dim());
    for (int k = 0; k < dim(); ++k) v[k] = free_[k].lower;
    return v;
  }
  Vector upper() const {
    Vector v(dim());
    for (int k = 0; k < dim(); ++k) v[k] = free_[k].upper;
    return v;
  }
  Vector project(const Vector& u) const { return u.cwiseMax(lower()).cwiseMin(upper()); }

  ControlVector controls(const Vector& u) const {
    ControlVector y = base_;
    for (int k = 0; k < dim(); ++k) y.values(free_[k].bus, free_[k].column) = u[k];
    return y;
  }

  Evaluation evaluate(const Vector& u) {
    Evaluation e;
    const ControlVector y = controls(u);
    ++pf_count_;
    e.sol = solve_pf(grid_, x_, y, options_.pf);
    if (!e.sol.converged) return e;
    const auto report = check_constraints(grid_, x_, y, e.sol, 0.0, options_.feasibility_tol);
    std::vector<double> values;
    for (const auto& entry : report.entries)
      if (penalized(entry.kind)) values.push_back(entry.violation);
    e.g = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    e.loss = e.sol.p_loss;
    e.ok = true;
    return e;
  }

private:
  const Grid& grid_;
  const InputVector& x_;
  const OrpdOptions& options_;
  ControlVector base_;
  std::vector<ControlSlot> free_;
  long pf_count_ = 0;
};

/// Powell-Hestenes-Rockafellar augmented Lagrangian for g <= 0.
double augmented(const Evaluation& e, const Vector& lambda, double mu) {
  double value = e.loss;
  for (Eigen::Index k = 0; k < e.g.size(); ++k) {
    const double shifted = std::max(0.0, lambda[k] + mu * e.g[k]);
    value += (shifted * shifted - lambda[k] * lambda[k]) / (2.0 * mu);
  }
  return value;
}

class InnerSolver {
public:
  InnerSolver(ReducedProblem& problem, const OrpdOptions& options)
      : problem_(problem), options_(options) {}

  double merit(const Vector& u, const Vector& lambda, double mu) {
    const auto e = problem_.evaluate(u);
    return e.ok ? augmented(e, lambda, mu) : kInf;
  }

  /// Central differences; falls back to one-sided when a probe fails.
  std::optional<Vector> gradient(const Vector& u, double center, const Vector& lambda, double mu) {
    const double h = options_.fd_step;
    Vector grad(u.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      Vector up = u, down = u;
      up[k] += h;
      down[k] -= h;
      const double fp = merit(up, lambda, mu);
      const double fm = merit(down, lambda, mu);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        grad[k] = (fp - fm) / (2.0 * h);
      } else if (std::isfinite(fp)) {
        grad[k] = (fp - center) / h;
      } else if (std::isfinite(fm)) {
        grad[k] = (center - fm) / h;
      } else {
        return std::nullopt;
      }
    }
    return grad;
  }

  double stationarity(const Vector& u, const Vector& grad) const {
    if (u.size() == 0) return 0.0;
    return (u - problem_.project(u - grad)).lpNorm<Eigen::Infinity>();
  }

  struct Result {
    Vector u;
    double stationarity = kInf;
  };

  /// Projected quasi-Newton on the box with an Armijo backtracking search.
  Result minimize(Vector u, const Vector& lambda, double mu) {
    const int n = static_cast<int>(u.size());
    const Vector lo = problem_.lower(), hi = problem_.upper();
    u = problem_.project(u);
    double value = merit(u, lambda, mu);
    Result result{u, kInf};
    if (!std::isfinite(value)) return result;
    auto grad = gradient(u, value, lambda, mu);
    if (!grad) return result;

    Matrix inv_hessian = Matrix::Identity(n, n);
    bool fresh = true;
    for (int it = 0; it < options_.max_inner; ++it) {
      result = {u, stationarity(u, *grad)};
      if (result.stationarity <= options_.stationarity_tol) return result;

      // Variables pinned at a bound with the gradient pushing outward stay fixed.
      std::vector<bool> pinned(n);
      for (int k = 0; k < n; ++k) {
        const double span = 1e-12 * std::max(1.0, hi[k] - lo[k]);
        pinned[k] = (u[k] <= lo[k] + span && (*grad)[k] > 0.0) ||
                    (u[k] >= hi[k] - span && (*grad)[k] < 0.0);
      }
      auto direction = [&](const Matrix& h) {
        Vector g = *grad;
        for (int k = 0; k < n; ++k)
          if (pinned[k]) g[k] = 0.0;
        Vector d = -(h * g);
        for (int k = 0; k < n; ++k)
          if (pinned[k]) d[k] = 0.0;
        return d;
      };
      Vector d = direction(inv_hessian);
      if (grad->dot(d) >= 0.0) {
        inv_hessian.setIdentity();
        fresh = true;
        d = direction(inv_hessian);
      }

      bool accepted = false;
      Vector next;
      double next_value = kInf;
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        double step = 1.0;
        for (int bt = 0; bt < 40; ++bt, step *= 0.5) {
          next = problem_.project(u + step * d);
          if ((next - u).lpNorm<Eigen::Infinity>() == 0.0) break;
          next_value = merit(next, lambda, mu);
          if (std::isfinite(next_value) && next_value <= value + 1e-4 * grad->dot(next - u)) {
            accepted = true;
            break;
          }
        }
        if (!accepted && !fresh) {
          inv_hessian.setIdentity();
          fresh = true;
          d = direction(inv_hessian);
        } else {
          break;
        }
      }
      if (!accepted) return result;

      auto next_grad = gradient(next, next_value, lambda, mu);
      if (!next_grad) return result;
      const Vector s = next - u;
      const Vector y = *next_grad - *grad;
      const double sy = s.dot(y);
      if (sy > 1e-14 * s.norm() * y.norm()) {
        if (fresh) {
          inv_hessian *= sy / y.squaredNorm();
          fresh = false;
        }
        const double rho = 1.0 / sy;
        const Matrix left = Matrix::Identity(n, n) - rho * s * y.transpose();
        inv_hessian = left * inv_hessian * left.transpose() + rho * s * s.transpose();
      }
      u = next;
      value = next_value;
      grad = next_grad;
    }
    result = {u, stationarity(u, *grad)};
    return result;
  }

private:
  ReducedProblem& problem_;
  const OrpdOptions& options_;
};

double positive_part_max(const Vector& g) {
  return g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
}

OrpdSolution finish(const Grid& grid, const InputVector& x, const ReducedProblem& problem,
                    const Vector& u, const OrpdOptions& options, OrpdSolution out) {
  out.y_star = problem.controls(u);
  const auto sol = solve_pf(grid, x, out.y_star, options.pf);
  out.p_loss = sol.p_loss;
  out.feasible_at =
      feasible_at(grid, x, out.y_star, sol, options.relaxation_ladder, options.feasibility_tol);
  return out;
}

OrpdSolution solve_from(const Grid& grid, const InputVector& x, const OrpdOptions& options,
                        const Vector& start) {
  ReducedProblem problem(grid, x, options);
  OrpdSolution out;
  out.y_star = problem.controls(start);

  Vector u = problem.project(start);
  const auto initial = problem.evaluate(u);
  if (!initial.ok) {
    out.note = "power flow failed at the initial point";
    out.inner_pf_count = problem.pf_count();
    return out;
  }

  InnerSolver inner(problem, options);
  Vector lambda = Vector::Zero(initial.g.size());
  double mu = options.initial_penalty;
  double best_loss = kInf;
  Vector best_u = u;
  double final_stationarity = kInf, final_violation = kInf;

  for (int outer = 0; outer < std::max(1, options.max_outer); ++outer) {
    ++out.iterations;
    const auto step = inner.minimize(u, lambda, mu);
    u = step.u;
    const auto e = problem.evaluate(u);
    if (!e.ok) {
      out.note = "power flow failed at an accepted iterate";
      break;
    }
    final_stationarity = step.stationarity;
    final_violation = positive_part_max(e.g);
    if (final_violation <= options.feasibility_tol && e.loss < best_loss) {
      best_loss = e.loss;
      best_u = u;
    }
    out.best_history.push_back(best_loss);
    if (final_violation <= options.feasibility_tol &&
        final_stationarity <= options.stationarity_tol) {
      out.converged = true;
      break;
    }
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
      lambda[k] = std::max(0.0, lambda[k] + mu * e.g[k]);
    mu *= options.penalty_growth;
  }

  out.kkt_stationarity = final_stationarity;
  out.inner_pf_count = problem.pf_count();
  if (!std::isfinite(best_loss)) {
    out.max_violation = final_violation;
    if (out.note.empty()) out.note = "no feasible iterate found";
    return finish(grid, x, problem, u, options, std::move(out));
  }
  const auto best = problem.evaluate(best_u);
  out.max_violation = positive_part_max(best.g);
  if (!out.converged && out.note.empty()) out.note = "outer iteration limit reached";
  return finish(grid, x, problem, best_u, options, std::move(out));
}

}  // namespace

OrpdSolution solve_orpd(const Grid& grid, const InputVector& x, const OrpdOptions& options) {
  ReducedProblem probe(grid, x, options);
  if (probe.dim() == 0) {
    OrpdSolution out;
    const Vector empty;
    const auto e = probe.evaluate(empty);
    out.inner_pf_count = 1;
    if (!e.ok) {
      out.y_star = probe.controls(empty);
      out.note = "power flow failed";
      return out;
    }
    out.max_violation = positive_part_max(e.g);
    out.converged = out.max_violation <= options.feasibility_tol;
    out.best_history.push_back(out.converged ? e.loss : kInf);
    if (!out.converged) out.note = "fixed controls violate constraints";
    return finish(grid, x, probe, empty, options, std::move(out));
  }

  std::vector<Vector> starts{0.5 * (probe.lower() + probe.upper())};
  Rng rng(options.seed);
  for (int r = 0; r < options.restarts; ++r) {
    Vector u(probe.dim());
    for (int k = 0; k < probe.dim(); ++k) u[k] = rng.uniform(probe.lower()[k], probe.upper()[k]);
    starts.push_back(std::move(u));
  }

  std::optional<OrpdSolution> best;
  long pf_total = 0;
  for (const auto& start : starts) {
    auto candidate = solve_from(grid, x, options, start);
    pf_total += candidate.inner_pf_count;
    auto rank = [](const OrpdSolution& s) {
      // converged beats feasible beats anything else; then lower loss
      const int tier = s.converged ? 0 : (s.max_violation <= 1e-6 ? 1 : 2);
      return std::make_pair(tier, s.p_loss);
    };
    if (!best || rank(candidate) < rank(*best)) best = std::move(candidate);
  }
  best->inner_pf_count = pf_total;
  return *best;
}

OrpdSolution brute_force_orpd(const Grid& grid, const InputVector& x, int resolution,
                              const OrpdOptions& options) {
  ReducedProblem problem(grid, x, options);
  const int dim = problem.dim();
  if (dim > 4) throw ConfigError("brute force limited to 4 free controls, grid has " + std::to_string(dim));
  if (resolution < 1) throw ConfigError("brute force resolution must be positive");

  const Vector lo = problem.lower(), hi = problem.upper();
  auto coordinate = [&](int k, int index) {
    if (resolution == 1) return 0.5 * (lo[k] + hi[k]);
    return lo[k] + (hi[k] - lo[k]) * static_cast<double>(index) / (resolution - 1);
  };

  long total = 1;
  for (int k = 0; k < dim; ++k) total *= resolution;

  OrpdSolution out;
  double best_loss = kInf;
  Vector best_u;
  std::vector<int> index(dim, 0);
  Vector u(dim);
  for (long n = 0; n < total; ++n) {
    long rest = n;
    for (int k = 0; k < dim; ++k) {
      index[k] = static_cast<int>(rest % resolution);
      rest /= resolution;
      u[k] = coordinate(k, index[k]);
    }
    const auto e = problem.evaluate(u);
    if (!e.ok || positive_part_max(e.g) > options.feasibility_tol) continue;
    if (e.loss < best_loss) {
      best_loss = e.loss;
      best_u = u;
    }
  }
  out.inner_pf_count = problem.pf_count();
  out.iterations = 1;
  if (!std::isfinite(best_loss)) {
    out.note = "no feasible grid point";
    out.y_star = problem.controls(0.5 * (lo + hi));
    return out;
  }
  out.converged = true;
  out.best_history.push_back(best_loss);
  return finish(grid, x, problem, best_u, options, std::move(out));
}

}  // namespace l2d
