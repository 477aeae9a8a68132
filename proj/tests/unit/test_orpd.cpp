#include <doctest.h>

#include <cmath>

#include "../support/random_grid.hpp"
#include "l2d/orpd.hpp"

using namespace l2d;

namespace {

InputVector three_bus_input(const Grid& g, double load_p, double load_q) {
  InputVector x = InputVector::zeros(g);
  x.values(2, kLoadP) = load_p;
  x.values(2, kLoadQ) = load_q;
  x.values(1, kVoltP) = 0.4;
  return x;
}

}  // namespace

TEST_CASE("control slots follow the grid") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  const auto slots = control_slots(g);
  CHECK(slots.size() == 6);
  CHECK_FALSE(slots[0].free());  // pinned slack setpoint
  int free = 0;
  for (const auto& s : slots) free += s.free();
  CHECK(free == 5);
}

TEST_CASE("zero-dimensional control space") {
  const Grid g = load_grid(testing::fixture("two_bus.json"));
  InputVector x = InputVector::zeros(g);
  x.values(1, kLoadP) = 0.4;
  const auto sol = solve_orpd(g, x);
  CHECK(sol.converged);
  ControlVector y = ControlVector::zeros(g);
  y.values(0, kVset) = 1.0;
  CHECK(sol.y_star == y);
  CHECK(sol.p_loss == solve_pf(g, x, y).p_loss);

  const auto bf = brute_force_orpd(g, x, 7);
  CHECK(bf.converged);
  CHECK(bf.p_loss == sol.p_loss);
}

TEST_CASE("three-bus optimum is no worse than a 50^3 scan") {
  for (const char* name : {"three_bus.json", "three_bus_tight.json"}) {
    CAPTURE(name);
    const Grid g = load_grid(testing::fixture(name));
    const auto x = three_bus_input(g, 1.2, 0.4);
    const auto sol = solve_orpd(g, x);
    REQUIRE(sol.converged);
    const auto bf = brute_force_orpd(g, x, 50);
    REQUIRE(bf.converged);
    CHECK(sol.p_loss <= bf.p_loss * 1.005);
    const auto pf = solve_pf(g, x, sol.y_star);
    CHECK(check_constraints(g, x, sol.y_star, pf, 0.0, 1e-6).feasible);
    CHECK(sol.kkt_stationarity <= 1e-6);
    CHECK(sol.max_violation <= 1e-6);
    CHECK(sol.feasible_at == 0.0);
  }
}

TEST_CASE("one-dimensional scan brackets the optimum") {
  const Grid g = load_grid(testing::fixture("one_comp.json"));
  InputVector x = InputVector::zeros(g);
  x.values(2, kLoadP) = 0.8;
  x.values(2, kLoadQ) = 0.3;
  const auto sol = solve_orpd(g, x);
  REQUIRE(sol.converged);
  const auto bf = brute_force_orpd(g, x, 1001);
  REQUIRE(bf.converged);
  const double cell = (0.8 - (-0.5)) / 1000.0;
  CHECK(std::abs(sol.y_star.values(2, kCompQ) - bf.y_star.values(2, kCompQ)) <= cell);
  CHECK(sol.p_loss <= bf.p_loss + 1e-12);
}

TEST_CASE("labels respect mask and box") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  InputVector x = InputVector::zeros(g);
  for (const auto& l : g.loads) {
    x.values(l.bus, kLoadP) = 0.2;
    x.values(l.bus, kLoadQ) = 0.05;
  }
  const auto sol = solve_orpd(g, x);
  CHECK(sol.converged);
  CHECK(sol.y_star.mask == control_mask(g));
  for (const auto& s : control_slots(g)) {
    const double v = sol.y_star.values(s.bus, s.column);
    CHECK(v >= s.lower);
    CHECK(v <= s.upper);
  }
  for (int i = 0; i < g.bus_count(); ++i)
    for (int c = 0; c < kControlColumns; ++c)
      if (!sol.y_star.mask(i, c)) CHECK(sol.y_star.values(i, c) == 0.0);
}

TEST_CASE("best-so-far history is non-increasing and runs are deterministic") {
  const Grid g = load_grid(testing::fixture("three_bus_tight.json"));
  const auto x = three_bus_input(g, 1.4, 0.5);
  OrpdOptions opt;
  opt.restarts = 2;
  opt.seed = 99;
  const auto a = solve_orpd(g, x, opt);
  const auto b = solve_orpd(g, x, opt);
  for (std::size_t k = 1; k < a.best_history.size(); ++k)
    CHECK(a.best_history[k] <= a.best_history[k - 1]);
  CHECK(a.y_star == b.y_star);
  CHECK(a.p_loss == b.p_loss);
  CHECK(a.inner_pf_count == b.inner_pf_count);
}

TEST_CASE("random small grids: optimum matches brute force") {
  Rng rng(404);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 5; ++trial) {
    Grid g = testing::random_grid(rng, 4);
    if (control_slots(g).size() > 3) continue;
    for (auto& b : g.buses) {
      b.v_min_pu = 0.94;
      b.v_max_pu = 1.06;
    }
    const auto x = testing::random_input(g, rng);
    const auto sol = solve_orpd(g, x);
    const auto bf = brute_force_orpd(g, x, 50);
    if (!bf.converged) continue;
    ++checked;
    CHECK(sol.converged);
    CHECK(sol.p_loss <= bf.p_loss * 1.005);
  }
  CHECK(checked >= 3);
}

TEST_CASE("brute-force guard") {
  const Grid g = load_grid(testing::fixture("small14.json"));
  CHECK_THROWS_AS(brute_force_orpd(g, InputVector::zeros(g), 3), ConfigError);
}
