#pragma once

// Neumann finite-volume operators of the form  shift * I - scale * Lap_h
// and the signal equation  0 = Lap v - mu v + nu u.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "chemolab/model.hpp"

namespace chemo::elliptic {

using model::Domain;
using model::ScalarField;

struct Entry {
  std::size_t row;
  std::size_t col;
  double value;
};

struct SolveStats {
  double residual;  // max-norm of A x - rhs
  int iterations;
};

/// shift * I - scale * Lap_h with the reflecting (ghost-cell) closure:
/// 3-point stencil in 1D, 5-point in 2D. Applied in difference form
///   (A x)_i = shift x_i + (scale/h^2) sum_{j ~ i} (x_i - x_j)
/// so constants map to shift * constant exactly and A = A^T by construction.
/// 1D solves use a precomputed LDL^T of the tridiagonal matrix; 2D solves use
/// Jacobi-preconditioned conjugate gradients capped at 10 * cells iterations.
class HelmholtzOperator {
 public:
  HelmholtzOperator(const Domain& domain, double shift, double scale = 1.0);

  const Domain& domain() const noexcept { return domain_; }
  double shift() const noexcept { return shift_; }

  void apply(std::span<const double> x, std::span<double> y) const;

  /// Row sums of the assembled matrix, computed as A * 1.
  std::vector<double> row_sums() const;

  /// Nonzero entries of the assembled matrix in row-major order.
  std::vector<Entry> entries() const;

  /// Solves A x = rhs until max|A x - rhs| <= tol * max(1, max|rhs|).
  /// `x` carries the initial guess for the iterative path.
  /// Throws SolverError on failure.
  SolveStats solve(std::span<const double> rhs, std::span<double> x, double tol) const;

  double residual_norm(std::span<const double> rhs, std::span<const double> x) const;

  /// Smallest relative tolerance the residual test can reliably certify in
  /// double precision: one ulp of x perturbs A x by about max-diagonal * ulp.
  double attainable_tolerance() const noexcept;

 private:
  SolveStats solve_tridiagonal(std::span<const double> rhs, std::span<double> x, double tol) const;
  SolveStats solve_pcg(std::span<const double> rhs, std::span<double> x, double tol) const;
  double diagonal(std::size_t i) const;

  Domain domain_;
  double shift_;
  double coupling_;  // scale / h^2
  // LDL^T of the 1D tridiagonal matrix: d_ = pivots, l_ = sub-diagonal multipliers.
  std::vector<double> pivots_;
  std::vector<double> lower_;
};

/// -Lap_h + mu I on a fixed domain.
class EllipticOperator {
 public:
  EllipticOperator(const Domain& domain, double mu);

  const Domain& domain() const noexcept { return op_.domain(); }
  double mu() const noexcept { return mu_; }
  const HelmholtzOperator& matrix() const noexcept { return op_; }

 private:
  double mu_;
  HelmholtzOperator op_;
};

EllipticOperator assemble(const Domain& domain, double mu);

/// v with max|A v - nu u| <= tol * max(1, max|nu u|).
/// `guess` (optional) seeds the iterative path.
ScalarField solve_v(const EllipticOperator& op, const ScalarField& u, double nu, double tol,
                    const ScalarField* guess = nullptr);

struct Delta0Result {
  double value;       // min over source and evaluation cells of the Green response
  bool certified;     // every source column was solved
  std::size_t columns;
  std::size_t argmin_source;
  std::size_t argmin_eval;
};

struct Delta0Options {
  std::size_t max_columns = 4096;  // exhaustive sweep up to this many cells
  unsigned threads = 1;
  double tol = 1e-13;
};

/// Discrete kernel constant: for each source cell y solve A g = nu e_y / w_y
/// and take the global minimum of g. Then v >= value * integrate(u) for every
/// nonnegative u. Grids above `max_columns` cells use a deterministic column
/// sample and the result is flagged non-certified.
Delta0Result delta0_h(const Domain& domain, double mu, double nu, const Delta0Options& opts = {});

}  // namespace chemo::elliptic
