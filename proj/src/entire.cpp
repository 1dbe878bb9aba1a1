#include "chemolab/entire.hpp"

#include <cmath>
#include <limits>

namespace chemo::entire {

namespace {

void rethrow_status(const stepper::Trajectory& traj) {
  if (traj.status == stepper::Status::positivity_loss) throw PositivityError(traj.detail);
  if (traj.status == stepper::Status::solver_failure) throw SolverError(traj.detail, 0.0, 0);
}

ScalarField blend(const ScalarField& u, const ScalarField& pu, double w) {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = (1.0 - w) * u[i] + w * pu[i];
  return ScalarField(u.domain(), std::move(out));
}

bool member(const std::optional<analysis::RectangleSpec>& rect, const ScalarField& u) {
  return rect && rect->member(u);
}

}  // namespace

StepControl period_grid(const StepControl& ctrl, double period) {
  StepControl out = ctrl;
  if (!out.fixed_dt) out.fixed_dt = period / std::ceil(period / ctrl.dt_max - 1e-9);
  return out;
}

ScalarField poincare_map(const ScalarField& u0, const Coefficients& coeffs, const StepControl& ctrl) {
  if (!coeffs.period()) throw PreconditionError("poincare_map: coefficients carry no period");
  const double T = *coeffs.period();
  const auto traj = stepper::evolve(u0, 0.0, T, coeffs, period_grid(ctrl, T));
  rethrow_status(traj);
  return traj.final().u;
}

FixedPointResult fixed_point_periodic(const Coefficients& coeffs, const ScalarField& init, const StepControl& ctrl,
                                      const PeriodicOptions& opts) {
  if (!coeffs.period()) throw PreconditionError("fixed_point_periodic: coefficients carry no period");
  if (!(opts.damping > 0.0 && opts.damping <= 1.0))
    throw PreconditionError("fixed_point_periodic: damping must lie in (0, 1]");
  const double T = *coeffs.period();
  const StepControl grid = period_grid(ctrl, T);

  FixedPointResult res{init, std::numeric_limits<double>::infinity(), 0, false, false, {}, std::nullopt, false, {}};
  ScalarField u = init;
  try {
    for (int it = 1; it <= opts.max_iter; ++it) {
      const ScalarField pu = poincare_map(u, coeffs, grid);
      const double r = model::max_abs_diff(pu, u);
      res.residual_history.push_back(r);
      res.iterations = it;
      if (r < res.residual) {
        res.residual = r;
        res.u_star = u;
      }
      if (opts.tol > 0.0 && r <= opts.tol) {
        res.converged = true;
        res.u_star = u;
        res.residual = r;
        break;
      }
      u = blend(u, pu, opts.damping);
    }
  } catch (const Error& e) {
    res.detail = e.what();
  }

  if (res.converged) {
    // Orbit check: samples at t and t + T on the step grid over [0, 2T].
    std::vector<ScalarField> samples;
    const auto traj = stepper::evolve(res.u_star, 0.0, 2.0 * T, coeffs, grid,
                                      {[&](const stepper::Sample& s) { samples.push_back(s.u); }});
    if (traj.status == stepper::Status::completed) {
      const std::size_t per = static_cast<std::size_t>(std::llround(T / *grid.fixed_dt));
      double err = 0.0;
      for (std::size_t k = 0; k + per < samples.size() && k <= per; ++k)
        err = std::max(err, model::max_abs_diff(samples[k], samples[k + per]));
      res.periodicity_error = err;
      res.periodicity_verified = err <= 10.0 * opts.tol;
    } else {
      res.detail = traj.detail;
    }
  }
  res.rectangle_member = member(opts.rectangle, res.u_star);
  return res;
}

FixedPointResult steady_state(const Coefficients& coeffs, const ScalarField& init, const StepControl& ctrl,
                              const SteadyOptions& opts) {
  if (!coeffs.time_independent()) throw PreconditionError("steady_state: coefficients depend on time");
  if (!(opts.chunk > 0.0)) throw PreconditionError("steady_state: chunk must be > 0");
  const auto op = elliptic::assemble(init.domain(), coeffs.mu());

  FixedPointResult res{init, 0.0, 0, false, false, {}, std::nullopt, false, {}};
  ScalarField u = init;
  double t = 0.0;
  // Evolve first so that invalid initial data is rejected by evolve itself.
  while (true) {
    const double t_next = std::min(t + opts.chunk, opts.t_cap);
    if (!(t_next > t)) break;
    const auto traj = stepper::evolve(u, t, t_next, coeffs, ctrl);
    u = traj.final().u;
    t = traj.final().t;
    ++res.iterations;
    if (traj.status != stepper::Status::completed) {
      res.detail = traj.detail;
      break;
    }
    const double r = stepper::stationary_residual(u, coeffs, op, t);
    res.residual_history.push_back(r);
    if (r <= opts.tol) {
      res.converged = true;
      break;
    }
  }
  res.u_star = u;
  res.residual = res.residual_history.empty() ? std::numeric_limits<double>::infinity()
                                              : res.residual_history.back();
  res.rectangle_member = member(opts.rectangle, u);
  return res;
}

PeriodsCrossCheck steady_state_via_periods(const Coefficients& coeffs, const ScalarField& init,
                                           const StepControl& ctrl, const std::vector<double>& periods,
                                           const PeriodicOptions& opts) {
  if (!coeffs.time_independent()) throw PreconditionError("steady_state_via_periods: coefficients depend on time");
  PeriodsCrossCheck out{periods, {}, 0.0};
  for (double T : periods) out.results.push_back(fixed_point_periodic(coeffs.with_period(T), init, ctrl, opts));
  for (std::size_t i = 0; i < out.results.size(); ++i)
    for (std::size_t j = i + 1; j < out.results.size(); ++j)
      out.max_pairwise =
          std::max(out.max_pairwise, model::max_abs_diff(out.results[i].u_star, out.results[j].u_star));
  return out;
}

PullbackResult pullback_entire(const Coefficients& coeffs, const ScalarField& u0, double window,
                               const std::vector<int>& n_schedule, double tol, const StepControl& ctrl) {
  if (n_schedule.empty()) throw PreconditionError("pullback_entire: empty schedule");
  for (std::size_t i = 1; i < n_schedule.size(); ++i)
    if (n_schedule[i] <= n_schedule[i - 1]) throw PreconditionError("pullback_entire: schedule must increase");
  if (n_schedule.front() <= 0) throw PreconditionError("pullback_entire: schedule entries must be positive");
  if (!(window >= 0.0)) throw PreconditionError("pullback_entire: window must be >= 0");

  StepControl grid = ctrl;
  if (!grid.fixed_dt) {
    const double T = coeffs.period().value_or(ctrl.dt_max);
    grid = period_grid(ctrl, T);
  }
  const double dt = *grid.fixed_dt;

  PullbackResult out{u0, {}, {}, false, {}, {}};
  std::optional<ScalarField> prev;
  for (int n : n_schedule) {
    // Window checkpoints sit on grid points so they do not split steps.
    const double w = std::min(window, static_cast<double>(n));
    const long total = static_cast<long>(std::floor(w / dt + 1e-9));
    const long spacing = std::max(1L, total / 16);
    std::vector<double> stops;
    const long last = static_cast<long>(std::floor(n / dt + 1e-9));
    for (long k = total - total % spacing; k > 0; k -= spacing)
      stops.push_back(-static_cast<double>(n) + static_cast<double>(last - k) * dt);

    const auto traj = stepper::evolve(u0, -static_cast<double>(n), 0.0, coeffs, grid, {}, {stops});
    if (traj.status != stepper::Status::completed) {
      out.detail = "run from -" + std::to_string(n) + ": " + traj.detail;
      break;
    }
    out.n_values.push_back(n);
    out.profile = traj.final().u;
    out.window.clear();
    for (const auto& st : traj.states)
      if (st.t >= -w - 1e-9 * dt) out.window.push_back(st);
    if (prev) {
      const double d = model::max_abs_diff(out.profile, *prev);
      out.differences.push_back(d);
      if (d <= tol) {
        out.converged = true;
        break;
      }
    }
    prev = out.profile;
  }
  return out;
}

}  // namespace chemo::entire
