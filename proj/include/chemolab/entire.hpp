#pragma once

// Periodic, stationary and pullback (entire) solutions built from the
// evolution operator.

#include <optional>
#include <vector>

#include "chemolab/analysis.hpp"
#include "chemolab/stepper.hpp"

namespace chemo::entire {

using model::Coefficients;
using model::ScalarField;
using model::State;
using stepper::StepControl;

/// Step control used for period-map work: a uniform grid with
/// dt = T / ceil(T / dt_max) unless ctrl.fixed_dt is already set.
StepControl period_grid(const StepControl& ctrl, double period);

/// u(T; 0, u0) for the period T of coeffs. Evolution failures are rethrown
/// (PositivityError or SolverError).
ScalarField poincare_map(const ScalarField& u0, const Coefficients& coeffs, const StepControl& ctrl);

struct FixedPointResult {
  ScalarField u_star;
  double residual;  // |P(u*) - u*|_inf, or the stationary residual for steady states
  int iterations;
  bool converged;
  bool rectangle_member;
  std::vector<double> residual_history;
  // Periodic results: max |u(t+T) - u(t)|_inf over the grid on [0, T].
  std::optional<double> periodicity_error;
  bool periodicity_verified = false;
  std::string detail;
};

struct PeriodicOptions {
  double damping = 1.0;
  double tol = 1e-8;
  int max_iter = 200;
  std::optional<analysis::RectangleSpec> rectangle;
};

/// Damped Picard iteration on the period map. Non-convergence is reported,
/// not thrown.
FixedPointResult fixed_point_periodic(const Coefficients& coeffs, const ScalarField& init, const StepControl& ctrl,
                                      const PeriodicOptions& opts = {});

struct SteadyOptions {
  double tol = 1e-10;
  double t_cap = 1000.0;
  double chunk = 1.0;  // residual is checked after every chunk of evolution
  std::optional<analysis::RectangleSpec> rectangle;
};

/// Relaxes init under time-independent coefficients until the stationary
/// residual drops to tol or t_cap is reached.
FixedPointResult steady_state(const Coefficients& coeffs, const ScalarField& init, const StepControl& ctrl,
                              const SteadyOptions& opts = {});

struct PeriodsCrossCheck {
  std::vector<double> periods;
  std::vector<FixedPointResult> results;
  double max_pairwise;  // largest |u*_T - u*_T'|_inf over pairs
};

/// Period-map fixed points of time-independent coefficients for each period;
/// they all approximate the same stationary solution.
PeriodsCrossCheck steady_state_via_periods(const Coefficients& coeffs, const ScalarField& init,
                                           const StepControl& ctrl, const std::vector<double>& periods = {1.0, 0.5, 0.25},
                                           const PeriodicOptions& opts = {});

struct PullbackResult {
  ScalarField profile;              // u(0; -n, u0) for the last n computed
  std::vector<int> n_values;        // schedule entries actually run
  std::vector<double> differences;  // |u_n - u_{n_prev}|_inf, one per consecutive pair
  bool converged;
  std::vector<State> window;        // checkpoints of the final run on [-window, 0]
  std::string detail;
};

/// u(0; -n, u0) along an increasing schedule; converged when consecutive
/// samples differ by at most tol.
PullbackResult pullback_entire(const Coefficients& coeffs, const ScalarField& u0, double window,
                               const std::vector<int>& n_schedule, double tol, const StepControl& ctrl);

}  // namespace chemo::entire
