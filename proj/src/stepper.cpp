#include "chemolab/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace chemo::stepper {

void StepControl::validate() const {
  auto positive = [](double x, const char* field) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("must be a positive number", std::string("step.") + field);
  };
  positive(dt_init, "dt_init");
  positive(dt_min, "dt_min");
  positive(dt_max, "dt_max");
  if (!(dt_min <= dt_init)) throw ConfigError("dt_min must not exceed dt_init", "step.dt_min");
  if (!(dt_init <= dt_max)) throw ConfigError("dt_init must not exceed dt_max", "step.dt_init");
  if (!(cfl_safety > 0.0 && cfl_safety <= 1.0)) throw ConfigError("must lie in (0, 1]", "step.cfl_safety");
  if (!(positivity_floor >= 0.0) || !std::isfinite(positivity_floor))
    throw ConfigError("must be >= 0", "step.positivity_floor");
  if (fixed_dt) positive(*fixed_dt, "fixed_dt");
}

double FaceVelocity::max_abs() const {
  double m = 0.0;
  for (double w : x) m = std::max(m, std::abs(w));
  for (double w : y) m = std::max(m, std::abs(w));
  return m;
}

FaceVelocity chemo_velocity(const ScalarField& v, double chi) {
  if (!(v.min() > 0.0)) throw SingularityError("chemotactic sensitivity evaluated with v <= 0");
  const Domain& d = v.domain();
  const int nx = d.nx(), ny = d.ny();
  const double h = d.h();
  FaceVelocity vel;
  vel.x.assign(static_cast<std::size_t>(nx + 1) * ny, 0.0);
  if (d.dim() == 2) vel.y.assign(static_cast<std::size_t>(nx) * (ny + 1), 0.0);
  if (chi == 0.0) return vel;
  for (int j = 0; j < ny; ++j) {
    for (int i = 1; i < nx; ++i) {
      const double vl = v[d.index(i - 1, j)], vr = v[d.index(i, j)];
      vel.x[i + (nx + 1) * j] = chi * ((vr - vl) / h) / (0.5 * (vl + vr));
    }
  }
  if (d.dim() == 2) {
    for (int j = 1; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double vb = v[d.index(i, j - 1)], vt = v[d.index(i, j)];
        vel.y[i + nx * j] = chi * ((vt - vb) / h) / (0.5 * (vb + vt));
      }
    }
  }
  return vel;
}

std::vector<double> advective_divergence(const ScalarField& u, const FaceVelocity& vel) {
  const Domain& d = u.domain();
  const int nx = d.nx(), ny = d.ny();
  const double h = d.h();
  auto upwind = [](double w, double lo, double hi) { return w > 0.0 ? w * lo : w * hi; };
  std::vector<double> fx(static_cast<std::size_t>(nx + 1) * ny, 0.0);
  for (int j = 0; j < ny; ++j)
    for (int i = 1; i < nx; ++i)
      fx[i + (nx + 1) * j] = upwind(vel.x[i + (nx + 1) * j], u[d.index(i - 1, j)], u[d.index(i, j)]);
  std::vector<double> fy;
  if (d.dim() == 2) {
    fy.assign(static_cast<std::size_t>(nx) * (ny + 1), 0.0);
    for (int j = 1; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        fy[i + nx * j] = upwind(vel.y[i + nx * j], u[d.index(i, j - 1)], u[d.index(i, j)]);
  }
  std::vector<double> div(d.size());
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double net = fx[i + 1 + (nx + 1) * j] - fx[i + (nx + 1) * j];
      if (d.dim() == 2) net += fy[i + nx * (j + 1)] - fy[i + nx * j];
      div[d.index(i, j)] = net / h;
    }
  }
  return div;
}

std::vector<double> laplacian(const ScalarField& u) {
  const Domain& d = u.domain();
  const int nx = d.nx(), ny = d.ny();
  const double inv_h2 = 1.0 / (d.h() * d.h());
  std::vector<double> out(d.size());
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const std::size_t k = d.index(i, j);
      double s = 0.0;
      if (i > 0) s += u[k - 1] - u[k];
      if (i < nx - 1) s += u[k + 1] - u[k];
      if (d.dim() == 2) {
        if (j > 0) s += u[k - nx] - u[k];
        if (j < ny - 1) s += u[k + nx] - u[k];
      }
      out[k] = s * inv_h2;
    }
  }
  return out;
}

double signal_tolerance(const elliptic::EllipticOperator& op, double requested) {
  return std::max(requested, op.matrix().attainable_tolerance());
}

double stationary_residual(const ScalarField& u, const Coefficients& coeffs,
                           const elliptic::EllipticOperator& op, double t) {
  const Domain& d = u.domain();
  const ScalarField v = elliptic::solve_v(op, u, coeffs.nu(), signal_tolerance(op));
  const auto div = advective_divergence(u, chemo_velocity(v, coeffs.chi()));
  const auto lap = laplacian(u);
  const ScalarField a = coeffs.a(t, d), b = coeffs.b(t, d);
  double m = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k)
    m = std::max(m, std::abs(lap[k] - div[k] + u[k] * (a[k] - b[k] * u[k])));
  return m;
}

State step_with_signal(const State& state, const ScalarField& v, const Coefficients& coeffs,
                       const elliptic::HelmholtzOperator& diffusion, double dt, double positivity_floor,
                       StepDetail* detail) {
  if (!(dt > 0.0)) throw PreconditionError("step: dt must be > 0");
  const ScalarField& u = state.u;
  const Domain& d = u.domain();
  const ScalarField a = coeffs.a(state.t, d), b = coeffs.b(state.t, d);
  const FaceVelocity vel = chemo_velocity(v, coeffs.chi());
  const auto div = advective_divergence(u, vel);

  std::vector<double> rhs(u.size());
  double reaction = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double r = u[k] * (a[k] - b[k] * u[k]);
    reaction += r;
    rhs[k] = u[k] + dt * (-div[k] + r);
  }
  std::vector<double> next(u.size(), 0.0);
  diffusion.solve(rhs, next, std::max(1e-13, diffusion.attainable_tolerance()));
  for (std::size_t k = 0; k < next.size(); ++k) {
    if (!(next[k] > positivity_floor))
      throw PositivityError("cell " + std::to_string(k) + " fell to " + std::to_string(next[k]) +
                            " at t = " + std::to_string(state.t + dt));
  }
  State out{state.t + dt, ScalarField(d, std::move(next))};
  if (detail != nullptr) {
    detail->mass_before = model::integrate(u);
    detail->mass_after = model::integrate(out.u);
    detail->reaction = reaction * d.weight();
    detail->max_velocity = vel.max_abs();
  }
  return out;
}

State step(const State& state, const Coefficients& coeffs, const elliptic::EllipticOperator& op, double dt,
           double positivity_floor, StepDetail* detail) {
  const ScalarField v = elliptic::solve_v(op, state.u, coeffs.nu(), signal_tolerance(op));
  const elliptic::HelmholtzOperator diffusion(state.u.domain(), 1.0, dt);
  return step_with_signal(state, v, coeffs, diffusion, dt, positivity_floor, detail);
}

double stable_dt(const ScalarField& u, const Coefficients& coeffs, const FaceVelocity& vel, double cfl_safety) {
  const double vmax = vel.max_abs();
  const double advective = vmax > 0.0 ? u.domain().h() / vmax : std::numeric_limits<double>::infinity();
  const double reactive = 1.0 / (coeffs.a_sup() + 2.0 * coeffs.b_sup() * u.max());
  return cfl_safety * std::min(advective, reactive);
}

double adaptive_dt(const State& state, const Coefficients& coeffs, const ScalarField& v, const StepControl& ctrl) {
  const FaceVelocity vel = chemo_velocity(v, coeffs.chi());
  const double dt = std::min(stable_dt(state.u, coeffs, vel, ctrl.cfl_safety), ctrl.cfl_safety * ctrl.dt_max);
  if (dt < ctrl.dt_min)
    throw StiffnessError("required step " + std::to_string(dt) +
                             " is below dt_min; lower step.dt_min or refine the grid",
                         dt);
  return std::min(dt, ctrl.dt_max);
}

const char* to_string(Status s) {
  switch (s) {
    case Status::completed: return "completed";
    case Status::positivity_loss: return "positivity_loss";
    case Status::solver_failure: return "solver_failure";
  }
  return "unknown";
}

namespace {

// Lifts zero cells by one implicit diffusion step; the step grows tenfold
// until every cell is representable as a positive double.
ScalarField positivize(const ScalarField& u0, const StepControl& ctrl, double& used_dt) {
  std::vector<double> out(u0.size());
  for (double dt = ctrl.dt_min;; dt *= 10.0) {
    const elliptic::HelmholtzOperator diffusion(u0.domain(), 1.0, dt);
    std::fill(out.begin(), out.end(), 0.0);
    diffusion.solve(u0.values(), out, std::max(1e-13, diffusion.attainable_tolerance()));
    if (std::all_of(out.begin(), out.end(), [](double x) { return x > 0.0; })) {
      used_dt = dt;
      return ScalarField(u0.domain(), std::move(out));
    }
    if (dt * 10.0 > ctrl.dt_max) throw PositivityError("diffusion prestep could not lift zero cells");
  }
}

}  // namespace

Trajectory evolve(const ScalarField& u0, double s, double t_end, const Coefficients& coeffs,
                  const StepControl& ctrl, const std::vector<Observer>& observers, const EvolveOptions& opts) {
  ctrl.validate();
  if (!(t_end >= s)) throw PreconditionError("evolve: t_end must be >= s");
  if (u0.min() < 0.0) throw PreconditionError("evolve: initial density has a negative cell");
  if (!(model::integrate(u0) > 0.0)) throw PreconditionError("evolve: initial density has zero mass");

  const Domain& domain = u0.domain();
  const elliptic::EllipticOperator op = elliptic::assemble(domain, coeffs.mu());
  const double tol = signal_tolerance(op, opts.elliptic_tol);

  Trajectory traj;
  State state{s, u0};
  if (u0.min() <= 0.0) {
    state.u = positivize(u0, ctrl, traj.prestep_dt);
    state.t = s + traj.prestep_dt;
    traj.positivized = true;
  }

  const bool grid = ctrl.fixed_dt.has_value();
  const double dtf = grid ? *ctrl.fixed_dt : 0.0;
  const double snap = grid ? 1e-9 * dtf : 0.0;

  // Ordered stop times in (state.t, t_end], snapped onto the grid when close.
  std::vector<double> stops;
  for (double x : opts.stop_times)
    if (x > state.t && x < t_end) stops.push_back(x);
  stops.push_back(t_end);
  if (grid) {
    for (double& x : stops) {
      const double k = std::round((x - s) / dtf);
      if (std::abs(s + k * dtf - x) <= snap) x = s + k * dtf;
    }
  }
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

  long n = grid ? static_cast<long>(std::floor((state.t - s) / dtf + 1e-9)) : 0;
  std::size_t next_stop = 0;
  double next_checkpoint = ctrl.dt_init;
  bool at_stop = false;
  std::optional<elliptic::HelmholtzOperator> diffusion;
  double diffusion_dt = 0.0;
  std::optional<ScalarField> v_prev;

  auto record = [&](const State& st) {
    if (traj.states.empty() || traj.states.back().t < st.t) traj.states.push_back(st);
  };

  try {
    while (true) {
      ScalarField v = elliptic::solve_v(op, state.u, coeffs.nu(), tol, v_prev ? &*v_prev : nullptr);
      const Sample sample{state.t, state.u, v, traj.steps};
      for (const auto& obs : observers) obs(sample);

      const double elapsed = state.t - s;
      if (traj.states.empty() || at_stop || elapsed >= next_checkpoint) {
        record(state);
        while (next_checkpoint <= elapsed) next_checkpoint *= opts.checkpoint_ratio;
      }
      if (next_stop >= stops.size()) break;
      if (opts.max_steps > 0 && traj.steps >= opts.max_steps) {
        record(state);
        traj.status = Status::solver_failure;
        traj.detail = "step budget exhausted";
        return traj;
      }

      const double target = stops[next_stop];
      double new_t;
      double dt;
      if (grid) {
        const double g = s + static_cast<double>(n + 1) * dtf;
        if (g < target - snap) {
          new_t = g;
          ++n;
        } else {
          new_t = target;
          if (std::abs(g - target) <= snap) ++n;
        }
        dt = new_t - state.t;
        const double bound = stable_dt(state.u, coeffs, chemo_velocity(v, coeffs.chi()), ctrl.cfl_safety);
        if (dt > bound * (1.0 + 1e-12))
          throw StiffnessError("fixed step " + std::to_string(dt) + " exceeds the stability bound " +
                                   std::to_string(bound),
                               bound);
      } else {
        dt = adaptive_dt(state, coeffs, v, ctrl);
        if (state.t + dt >= target - 1e-12 * std::max(1.0, std::abs(target))) {
          dt = target - state.t;
          new_t = target;
        } else {
          new_t = state.t + dt;
        }
      }
      at_stop = new_t == target;
      if (at_stop) ++next_stop;

      if (!diffusion || diffusion_dt != dt) {
        diffusion.emplace(domain, 1.0, dt);
        diffusion_dt = dt;
      }
      State next = step_with_signal(state, v, coeffs, *diffusion, dt, ctrl.positivity_floor);
      next.t = new_t;
      state = std::move(next);
      v_prev = std::move(v);
      ++traj.steps;
    }
  } catch (const PositivityError& e) {
    record(state);
    traj.status = Status::positivity_loss;
    traj.detail = std::string("positivity: ") + e.what();
  } catch (const SingularityError& e) {
    record(state);
    traj.status = Status::positivity_loss;
    traj.detail = std::string("singular signal: ") + e.what();
  } catch (const StiffnessError& e) {
    record(state);
    traj.status = Status::solver_failure;
    traj.detail = std::string("stiffness: ") + e.what();
  } catch (const SolverError& e) {
    record(state);
    traj.status = Status::solver_failure;
    traj.detail = std::string("linear solver: ") + e.what();
  }
  return traj;
}

}  // namespace chemo::stepper
