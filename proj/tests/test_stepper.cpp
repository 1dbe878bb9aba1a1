#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "chemolab/stepper.hpp"

using namespace chemo;
using namespace chemo::stepper;
using model::Domain;

namespace {

ScalarField random_field(const Domain& d, std::mt19937_64& rng, double lo = 0.2, double hi = 3.0) {
  std::uniform_real_distribution<double> uv(lo, hi);
  std::vector<double> u(d.size());
  for (double& x : u) x = uv(rng);
  return ScalarField(d, std::move(u));
}

// Scalar logistic ODE u' = u(1 - u) by classical RK4 with tiny steps.
double logistic_rk4(double u, double t) {
  const int n = 100000;
  const double h = t / n;
  auto f = [](double x) { return x * (1.0 - x); };
  for (int i = 0; i < n; ++i) {
    const double k1 = f(u), k2 = f(u + 0.5 * h * k1), k3 = f(u + 0.5 * h * k2), k4 = f(u + h * k3);
    u += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return u;
}

}  // namespace

TEST_CASE("step control validation names fields") {
  StepControl c;
  CHECK_NOTHROW(c.validate());
  c.dt_min = 1.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "step.dt_min");
  }
  c = StepControl{};
  c.cfl_safety = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("face velocities") {
  const Domain d = Domain::interval(1.0, 8);
  const ScalarField vc(d, 2.0);
  CHECK(chemo_velocity(vc, 3.0).max_abs() == 0.0);
  std::mt19937_64 rng(1);
  CHECK(chemo_velocity(random_field(d, rng), 0.0).max_abs() == 0.0);

  // v = x + 1: unit gradient, so the interior face velocity is 1 / v_face.
  std::vector<double> v(8);
  for (int i = 0; i < 8; ++i) v[i] = d.center(0, i) + 1.0;
  const FaceVelocity vel = chemo_velocity(ScalarField(d, v), 1.0);
  CHECK(vel.x.front() == 0.0);
  CHECK(vel.x.back() == 0.0);
  for (int i = 1; i < 8; ++i) CHECK(vel.x[i] == doctest::Approx(1.0 / (0.5 * (v[i - 1] + v[i]))).epsilon(1e-12));

  std::vector<double> bad(8, 1.0);
  bad[2] = 0.0;
  CHECK_THROWS_AS(chemo_velocity(ScalarField(d, bad), 1.0), SingularityError);
}

TEST_CASE("flux divergence integrates to zero (property)") {
  std::mt19937_64 rng(9);
  for (const Domain& d : {Domain::interval(1.0, 37), Domain::rectangle(2.0, 1.0, 16, 8)}) {
    for (int k = 0; k < 100; ++k) {
      const ScalarField u = random_field(d, rng), v = random_field(d, rng);
      const auto div = advective_divergence(u, chemo_velocity(v, 2.5));
      double s = 0.0, scale = 0.0;
      for (double x : div) {
        s += x * d.weight();
        scale = std::max(scale, std::abs(x) * d.weight());
      }
      CHECK(std::abs(s) <= 1e-12 * std::max(1.0, scale * d.size()));
    }
  }
}

TEST_CASE("constant equilibrium is a fixed point of one step") {
  const Domain d = Domain::interval(1.0, 64);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  const auto op = elliptic::assemble(d, 1.0);
  const State next = step(State{0.0, ScalarField(d, 1.0)}, coeffs, op, 1e-3);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(std::abs(next.u[i] - 1.0) <= 1e-13);
}

TEST_CASE("chi = 0 single step follows the logistic ODE") {
  const Domain d = Domain::interval(1.0, 16);
  const auto coeffs = model::Coefficients::constant(0.0, 1.0, 1.0, 1.0, 1.0);
  const auto op = elliptic::assemble(d, 1.0);
  const double dt = 1e-3;
  const State next = step(State{0.0, ScalarField(d, 0.5)}, coeffs, op, dt);
  const double oracle = logistic_rk4(0.5, dt);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(next.u[i] == doctest::Approx(0.5 + dt * 0.25).epsilon(1e-12));
    CHECK(std::abs(next.u[i] - oracle) <= dt * dt);
  }
}

TEST_CASE("discrete mass identity holds per step (property)") {
  std::mt19937_64 rng(17);
  for (const Domain& d : {Domain::interval(1.0, 64), Domain::rectangle(1.0, 1.0, 12, 12)}) {
    const auto coeffs = model::Coefficients::constant(1.5, 1.0, 1.0, 1.3, 0.9);
    const auto op = elliptic::assemble(d, 1.0);
    for (int k = 0; k < 30; ++k) {
      const State s{0.0, random_field(d, rng)};
      StepDetail det;
      const ScalarField v = elliptic::solve_v(op, s.u, 1.0, signal_tolerance(op));
      StepControl ctrl;
      const double dt = adaptive_dt(s, coeffs, v, ctrl);
      step(s, coeffs, op, dt, 0.0, &det);
      CHECK(std::abs(det.mass_after - det.mass_before - dt * det.reaction) <= 1e-10);
    }
  }
}

TEST_CASE("adaptive_dt examples") {
  const Domain d = Domain::interval(1.0, 16);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  const State s{0.0, ScalarField(d, 1.0)};
  const ScalarField v(d, 1.0);
  StepControl c;
  c.dt_max = 1.0;
  c.dt_init = 1e-3;
  CHECK(adaptive_dt(s, coeffs, v, c) == doctest::Approx(c.cfl_safety / 3.0).epsilon(1e-15));
  c.dt_max = 1e-2;
  CHECK(adaptive_dt(s, coeffs, v, c) == doctest::Approx(c.cfl_safety * 1e-2).epsilon(1e-15));
  c.cfl_safety = 1.0;
  c.dt_max = 1e-3;
  CHECK(adaptive_dt(s, coeffs, v, c) == 1e-3);
  // Huge reaction rate forces the formula below dt_min.
  const auto stiff = model::Coefficients::constant(1.0, 1.0, 1.0, 1e12, 1.0);
  StepControl c2;
  CHECK_THROWS_AS(adaptive_dt(s, stiff, v, c2), StiffnessError);
}

TEST_CASE("evolve: constant equilibrium over 10^4 steps") {
  const Domain d = Domain::interval(1.0, 64);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  StepControl c;
  c.fixed_dt = 1e-3;
  double worst = 0.0;
  const auto traj = evolve(ScalarField(d, 1.0), 0.0, 10.0, coeffs, c,
                           {[&](const Sample& s) { worst = std::max(worst, std::abs(s.u.max() - 1.0) + std::abs(s.u.min() - 1.0)); }});
  CHECK(traj.status == Status::completed);
  CHECK(traj.steps == 10000);
  CHECK(traj.final().t == 10.0);
  CHECK(worst <= 1e-10);
}

TEST_CASE("evolve: chi = 0 matches the logistic closed form") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(0.0, 1.0, 1.0, 1.0, 1.0);
  StepControl c;
  c.dt_max = 1e-3;
  c.fixed_dt = 1e-3;
  const auto traj = evolve(ScalarField(d, 0.5), 0.0, 5.0, coeffs, c);
  REQUIRE(traj.status == Status::completed);
  const double exact = 1.0 / (1.0 + std::exp(-5.0));
  CHECK(std::abs(traj.final().u.max() - exact) <= 1e-3);
  CHECK(std::abs(traj.final().u.min() - exact) <= 1e-3);
}

TEST_CASE("evolve rejects invalid initial data") {
  const Domain d = Domain::interval(1.0, 8);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  CHECK_THROWS_AS(evolve(ScalarField(d, 0.0), 0.0, 1.0, coeffs, {}), PreconditionError);
  std::vector<double> neg(8, 1.0);
  neg[0] = -1e-3;
  CHECK_THROWS_AS(evolve(ScalarField(d, neg), 0.0, 1.0, coeffs, {}), PreconditionError);
}

TEST_CASE("evolve lifts zero cells with a diffusion prestep") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  std::vector<double> u(32, 0.0);
  u[5] = 1.0;
  const auto traj = evolve(ScalarField(d, u), 0.0, 0.5, coeffs, {});
  CHECK(traj.positivized);
  CHECK(traj.prestep_dt > 0.0);
  CHECK(traj.status == Status::completed);
  CHECK(traj.final().u.min() > 0.0);
}

TEST_CASE("evolve: checkpoints increase and include stop times") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.2, 1.0);
  std::mt19937_64 rng(4);
  EvolveOptions o;
  o.stop_times = {0.37, 1.0, 2.5};
  const auto traj = evolve(random_field(d, rng), 0.0, 3.0, coeffs, {}, {}, o);
  REQUIRE(traj.status == Status::completed);
  for (std::size_t i = 1; i < traj.states.size(); ++i) CHECK(traj.states[i].t > traj.states[i - 1].t);
  for (double t : o.stop_times) {
    bool found = false;
    for (const auto& s : traj.states) found = found || s.t == t;
    CHECK(found);
  }
  CHECK(traj.states.front().t == 0.0);
  CHECK(traj.final().t == 3.0);
  for (const auto& s : traj.states) CHECK(s.u.min() > 0.0);
}

TEST_CASE("evolve: cocycle property on the fixed grid") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(2.0, 1.0, 1.0, 1.5, 1.0);
  std::mt19937_64 rng(8);
  StepControl c;
  c.fixed_dt = 1.0 / 128.0;
  for (int k = 0; k < 5; ++k) {
    const ScalarField u0 = random_field(d, rng, 0.5, 2.0);
    const auto whole = evolve(u0, 0.0, 2.0, coeffs, c);
    const auto first = evolve(u0, 0.0, 1.0, coeffs, c);
    const auto second = evolve(first.final().u, 1.0, 2.0, coeffs, c);
    REQUIRE(whole.status == Status::completed);
    REQUIRE(second.status == Status::completed);
    CHECK(model::max_abs_diff(whole.final().u, second.final().u) <= 1e-12);
  }
}

TEST_CASE("evolve: positivity is preserved on random data (property)") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> chi(0.0, 4.0);
  for (int k = 0; k < 20; ++k) {
    const Domain d = Domain::interval(1.0, 48);
    const auto coeffs = model::Coefficients::constant(chi(rng), 1.0, 1.0, 1.0 + chi(rng), 1.0);
    const auto traj = evolve(random_field(d, rng, 0.01, 5.0), 0.0, 1.0, coeffs, {});
    CHECK(traj.status == Status::completed);
    for (const auto& s : traj.states) CHECK(s.u.min() > 0.0);
  }
}

TEST_CASE("evolve: failures truncate and report") {
  const Domain d = Domain::interval(1.0, 16);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  StepControl floor;
  floor.positivity_floor = 5.0;
  const auto t1 = evolve(ScalarField(d, 1.0), 0.0, 1.0, coeffs, floor);
  CHECK(t1.status == Status::positivity_loss);
  CHECK(t1.detail.rfind("positivity: ", 0) == 0);
  CHECK_FALSE(t1.states.empty());

  EvolveOptions budget;
  budget.max_steps = 3;
  const auto t2 = evolve(ScalarField(d, 1.0), 0.0, 1.0, coeffs, {}, {}, budget);
  CHECK(t2.status == Status::solver_failure);
  CHECK(t2.detail == "step budget exhausted");
  CHECK(t2.steps == 3);

  StepControl big;
  big.dt_max = 1.0;
  big.dt_init = 0.5;
  big.fixed_dt = 0.5;
  const auto t3 = evolve(ScalarField(d, 1.0), 0.0, 1.0, coeffs, big);
  CHECK(t3.status == Status::solver_failure);
  CHECK(t3.detail.rfind("stiffness: ", 0) == 0);
}

TEST_CASE("evolve is deterministic") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.5, 1.0);
  std::mt19937_64 r1(5), r2(5);
  const auto a = evolve(random_field(d, r1), 0.0, 2.0, coeffs, {});
  const auto b = evolve(random_field(d, r2), 0.0, 2.0, coeffs, {});
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    CHECK(a.states[i].t == b.states[i].t);
    CHECK(a.states[i].u == b.states[i].u);
  }
}

TEST_CASE("stationary residual vanishes at the constant equilibrium") {
  const Domain d = Domain::interval(1.0, 32);
  const auto coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 2.0, 1.0);
  CHECK(stationary_residual(ScalarField(d, 2.0), coeffs, elliptic::assemble(d, 1.0), 0.0) <= 1e-12);
}
