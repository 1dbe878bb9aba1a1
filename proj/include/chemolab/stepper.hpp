#pragma once

// IMEX time stepping for u_t = Lap u - chi div(u/v grad v) + u(a - b u):
// explicit upwind advection and reaction, implicit diffusion.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chemolab/elliptic.hpp"
#include "chemolab/model.hpp"

namespace chemo::stepper {

using model::Coefficients;
using model::Domain;
using model::ScalarField;
using model::State;

struct StepControl {
  double dt_init = 1e-3;
  double dt_min = 1e-9;
  double dt_max = 1e-2;
  double cfl_safety = 0.2;
  double positivity_floor = 0.0;
  // When set, steps sit on the grid s + n * fixed_dt (stop times split a step).
  std::optional<double> fixed_dt;

  /// Throws ConfigError naming the offending field ("step.<name>").
  void validate() const;
};

/// Face velocities chi (dv/dn) / v_face. Faces normal to x are stored as
/// (nx + 1) * ny values, face (i, j) lying between cells i-1 and i; faces
/// normal to y as nx * (ny + 1). Boundary faces are zero.
struct FaceVelocity {
  std::vector<double> x;
  std::vector<double> y;

  double max_abs() const;
};

/// Throws SingularityError if min v <= 0.
FaceVelocity chemo_velocity(const ScalarField& v, double chi);

/// Cellwise divergence of the upwind flux vel * u_upwind.
std::vector<double> advective_divergence(const ScalarField& u, const FaceVelocity& vel);

/// Cellwise Neumann Laplacian.
std::vector<double> laplacian(const ScalarField& u);

/// max |Lap_h u - div_h(upwind flux) + u(a - b u)| with v solved from u.
double stationary_residual(const ScalarField& u, const Coefficients& coeffs,
                           const elliptic::EllipticOperator& op, double t);

/// Relative tolerance used for the signal solve in the stepper.
double signal_tolerance(const elliptic::EllipticOperator& op, double requested = 1e-12);

struct StepDetail {
  double mass_before = 0.0;
  double mass_after = 0.0;
  double reaction = 0.0;       // integral of u (a - b u) at step start
  double max_velocity = 0.0;
};

/// One step of size dt from state.t. Throws PositivityError if a cell of the
/// new state is <= positivity_floor; solver and singularity errors propagate.
State step(const State& state, const Coefficients& coeffs, const elliptic::EllipticOperator& op,
           double dt, double positivity_floor = 0.0, StepDetail* detail = nullptr);

/// Same, with v already solved for state.u.
State step_with_signal(const State& state, const ScalarField& v, const Coefficients& coeffs,
                       const elliptic::HelmholtzOperator& diffusion, double dt,
                       double positivity_floor = 0.0, StepDetail* detail = nullptr);

/// cfl * min(h / max|vel|, 1 / (a_sup + 2 b_sup max u)) without the dt_max cap.
double stable_dt(const ScalarField& u, const Coefficients& coeffs, const FaceVelocity& vel,
                 double cfl_safety);

/// cfl * min(h / max|vel|, 1 / (a_sup + 2 b_sup max u), dt_max), capped at
/// dt_max. Throws StiffnessError if the result is below dt_min.
double adaptive_dt(const State& state, const Coefficients& coeffs, const ScalarField& v,
                   const StepControl& ctrl);

// ---------------------------------------------------------------------------

enum class Status { completed, positivity_loss, solver_failure };

const char* to_string(Status s);

struct Sample {
  double t;
  const ScalarField& u;
  const ScalarField& v;
  long step;
};

using Observer = std::function<void(const Sample&)>;

struct EvolveOptions {
  std::vector<double> stop_times;  // forced step boundaries and checkpoints
  double elliptic_tol = 1e-12;
  double checkpoint_ratio = 1.2;
  long max_steps = 0;  // 0 = unlimited
};

struct Trajectory {
  std::vector<State> states;  // checkpoints, strictly increasing in t
  Status status = Status::completed;
  std::string detail;  // which guard tripped when status != completed
  long steps = 0;
  bool positivized = false;  // zero cells in u0 were lifted by a diffusion prestep
  double prestep_dt = 0.0;

  const State& final() const { return states.back(); }
};

/// Evolves u0 from s to t_end. Throws PreconditionError if u0 has a negative
/// cell or zero mass; runtime failures truncate the trajectory and set status.
Trajectory evolve(const ScalarField& u0, double s, double t_end, const Coefficients& coeffs,
                  const StepControl& ctrl, const std::vector<Observer>& observers = {},
                  const EvolveOptions& opts = {});

}  // namespace chemo::stepper
