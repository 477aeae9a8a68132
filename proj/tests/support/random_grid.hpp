#pragma once

#include <string>

#include "l2d/grid.hpp"
#include "l2d/orpd.hpp"
#include "l2d/powerflow.hpp"
#include "l2d/random.hpp"

namespace l2d::testing {

inline std::string fixture(const std::string& name) {
  return std::string(L2D_FIXTURES) + "/" + name;
}

/// Small connected grid with random pi-model parameters. Bus 0 hosts the slack;
/// a few buses get generators, loads and compensators.
inline Grid random_grid(Rng& rng, int n) {
  Grid g;
  g.base_mva = 100.0;
  for (int i = 0; i < n; ++i) g.buses.push_back({i, "b" + std::to_string(i), 150.0, 0.9, 1.1});
  auto random_line = [&](int a, int b) {
    Line l;
    l.from_bus = a;
    l.to_bus = b;
    const double x = rng.uniform(0.05, 0.3), r = rng.uniform(0.0, 0.4) * x;
    l.y_series = 1.0 / Complex(r, x);
    l.y_shunt_from = {rng.uniform(0.0, 0.01), rng.uniform(0.0, 0.05)};
    l.y_shunt_to = {rng.uniform(0.0, 0.01), rng.uniform(0.0, 0.05)};
    l.tap_ratio = rng.uniform() < 0.3 ? rng.uniform(0.95, 1.05) : 1.0;
    l.s_max_pu = 5.0;
    l.angle_diff_min_rad = -0.8;
    l.angle_diff_max_rad = 0.8;
    return l;
  };
  for (int i = 1; i < n; ++i) g.lines.push_back(random_line(static_cast<int>(rng.below(i)), i));
  for (int extra = 0; extra < n / 2; ++extra) {
    const int a = static_cast<int>(rng.below(n)), b = static_cast<int>(rng.below(n));
    if (a != b) g.lines.push_back(random_line(a, b));
  }
  g.volt_gens.push_back({0, -5.0, 5.0, true, std::nullopt, std::nullopt});
  for (int i = 1; i < n; ++i) {
    const double u = rng.uniform();
    if (u < 0.25) g.volt_gens.push_back({i, -1.0, 1.0, false, std::nullopt, std::nullopt});
    else if (u < 0.4) g.stat_gens.push_back({i});
    if (rng.uniform() < 0.7) g.loads.push_back({i});
    if (rng.uniform() < 0.25) g.compensators.push_back({i, -0.3, 0.3});
  }
  return g;
}

/// Moderate random injections that keep the power flow well inside its
/// solvable region.
inline InputVector random_input(const Grid& grid, Rng& rng) {
  InputVector x = InputVector::zeros(grid);
  for (const auto& l : grid.loads) {
    x.values(l.bus, kLoadP) = rng.uniform(0.0, 0.3);
    x.values(l.bus, kLoadQ) = rng.uniform(-0.05, 0.1);
  }
  for (const auto& s : grid.stat_gens) {
    x.values(s.bus, kStatP) = rng.uniform(0.0, 0.2);
    x.values(s.bus, kStatQ) = rng.uniform(-0.05, 0.05);
  }
  for (const auto& v : grid.volt_gens)
    if (!v.is_slack) x.values(v.bus, kVoltP) = rng.uniform(0.0, 0.3);
  return x;
}

inline ControlVector random_control(const Grid& grid, Rng& rng) {
  ControlVector y = ControlVector::zeros(grid);
  for (const auto& v : grid.volt_gens) y.values(v.bus, kVset) = rng.uniform(0.97, 1.05);
  for (const auto& c : grid.compensators) y.values(c.bus, kCompQ) = rng.uniform(-0.2, 0.2);
  return y;
}

/// Controls at the midpoint of every box.
inline ControlVector midpoint_control(const Grid& grid) {
  ControlVector y = ControlVector::zeros(grid);
  for (const auto& s : control_slots(grid)) y.values(s.bus, s.column) = 0.5 * (s.lower + s.upper);
  return y;
}

}  // namespace l2d::testing
