#pragma once

// Spatial grid, coefficient fields and quadrature shared by every other part
// of the library.
//
// Fields are cell averages on a uniform grid over an axis-aligned interval
// (dim 1) or rectangle with square cells (dim 2). Cells are numbered
// x-fastest: index = i + nx * j.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "chemolab/error.hpp"

namespace chemo::model {

class Domain {
 public:
  /// Validating constructor. Throws ConfigError naming the bad field.
  Domain(int dim, std::array<double, 2> lengths, std::array<int, 2> cells);

  static Domain interval(double length, int cells);
  static Domain rectangle(double lx, double ly, int nx, int ny);

  int dim() const noexcept { return dim_; }
  double length(int axis) const { return lengths_.at(axis); }
  int cells(int axis) const { return cells_.at(axis); }
  int nx() const noexcept { return cells_[0]; }
  int ny() const noexcept { return dim_ == 2 ? cells_[1] : 1; }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(nx()) * static_cast<std::size_t>(ny());
  }
  /// Cell edge length; identical on both axes in 2D.
  double h() const noexcept { return h_; }
  /// |Omega|, the product of the lengths.
  double measure() const noexcept { return measure_; }
  /// Quadrature weight of every cell (measure / size).
  double weight() const noexcept { return weight_; }
  /// Cell-center coordinate along `axis` of cell number `i` on that axis.
  double center(int /*axis*/, int i) const { return (i + 0.5) * h_; }
  std::size_t index(int i, int j = 0) const noexcept {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx()) * static_cast<std::size_t>(j);
  }

  friend bool operator==(const Domain&, const Domain&) = default;

 private:
  int dim_;
  std::array<double, 2> lengths_;
  std::array<int, 2> cells_;
  double h_;
  double measure_;
  double weight_;
};

/// Cell-averaged values on a Domain. Every value is finite.
class ScalarField {
 public:
  ScalarField(Domain domain, std::vector<double> values);
  ScalarField(Domain domain, double constant);

  const Domain& domain() const noexcept { return domain_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double min() const;
  double max() const;

  friend bool operator==(const ScalarField&, const ScalarField&) = default;

 private:
  Domain domain_;
  std::vector<double> values_;
};

/// Max-norm distance between two fields on the same domain.
double max_abs_diff(const ScalarField& a, const ScalarField& b);

/// u(t, .) of an evolving solution; strictly positive by construction.
struct State {
  double t;
  ScalarField u;

  /// Throws PositivityError if any cell is <= 0.
  static State checked(double t, ScalarField u);
};

// ---------------------------------------------------------------------------
// Coefficient expressions

struct ConstantExpr {
  double value = 1.0;
};

/// offset + sum_k cos_amp[k] cos(2 pi (k+1) t / period) + sin_amp[k] sin(...)
struct FourierTime {
  double offset = 1.0;
  double period = 1.0;
  std::vector<double> cos_amp;
  std::vector<double> sin_amp;

  double operator()(double t) const;
  bool is_constant() const;
};

/// coeffs[k] * x_axis^k, x measured from the lower domain edge.
struct AxisPolynomial {
  int axis = 0;
  std::vector<double> coeffs;
};

/// amp * cos(mode * pi * x_axis / L_axis); Neumann-compatible for integer modes.
struct CosineMode {
  int axis = 0;
  int mode = 1;
  double amp = 0.0;
};

/// offset + sum of single-axis polynomial and cosine terms.
struct SpacePart {
  double offset = 1.0;
  std::vector<AxisPolynomial> polynomials;
  std::vector<CosineMode> cosines;
};

/// time(t) * space(x).
struct SeparableExpr {
  FourierTime time;
  SpacePart space;
};

enum class Interp { linear, previous };

/// Sampled cell values at increasing times; `values[k]` has one entry per
/// cell. With `period` set, time is reduced modulo the period into
/// [times.front(), times.front() + period) and interpolation wraps.
struct TabulatedExpr {
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  Interp interp = Interp::linear;
  std::optional<double> period;
};

using CoeffExpr = std::variant<ConstantExpr, SeparableExpr, TabulatedExpr>;

/// Throws ConfigError if the descriptor is malformed for `domain`.
void validate(const CoeffExpr& expr, const Domain& domain);

/// True when the expression cannot vary with t.
bool is_time_independent(const CoeffExpr& expr);

/// Cell averages of `expr` at time t. Separable terms are averaged exactly.
ScalarField eval_coeff(const CoeffExpr& expr, double t, const Domain& domain);

struct AuditReport {
  double observed_min;
  double observed_max;
  double claimed_inf;
  double claimed_sup;
  int time_samples;
  bool pass;
};

/// Dense sampling of `expr` over `samples` equispaced times in
/// [t0, t1] (endpoints included) and every cell. samples >= 1000.
AuditReport coeff_audit(const CoeffExpr& expr, double claimed_inf, double claimed_sup,
                        double t0, double t1, int samples, const Domain& domain);

// ---------------------------------------------------------------------------

struct Bounds {
  double inf;
  double sup;
};

/// chi, mu, nu and the logistic fields a(t,x), b(t,x) with declared bounds.
/// Every evaluation of a or b is checked against the declared bounds.
class Coefficients {
 public:
  Coefficients(double chi, double mu, double nu, CoeffExpr a, CoeffExpr b, Bounds a_bounds,
               Bounds b_bounds, std::optional<double> period = std::nullopt);

  /// Constant a and b; bounds are the constants themselves.
  static Coefficients constant(double chi, double mu, double nu, double a, double b);

  double chi() const noexcept { return chi_; }
  double mu() const noexcept { return mu_; }
  double nu() const noexcept { return nu_; }
  double a_inf() const noexcept { return a_bounds_.inf; }
  double a_sup() const noexcept { return a_bounds_.sup; }
  double b_inf() const noexcept { return b_bounds_.inf; }
  double b_sup() const noexcept { return b_bounds_.sup; }
  const CoeffExpr& a_expr() const noexcept { return a_; }
  const CoeffExpr& b_expr() const noexcept { return b_; }
  std::optional<double> period() const noexcept { return period_; }
  bool time_independent() const;

  /// Throws ConfigError if a sampled value leaves the declared bounds.
  ScalarField a(double t, const Domain& domain) const;
  ScalarField b(double t, const Domain& domain) const;

  /// Same coefficients declared T-periodic (re-validated).
  Coefficients with_period(double period) const;
  Coefficients with_chi(double chi) const;

 private:
  double chi_, mu_, nu_;
  CoeffExpr a_, b_;
  Bounds a_bounds_, b_bounds_;
  std::optional<double> period_;
};

// ---------------------------------------------------------------------------
// Quadrature

/// Midpoint quadrature of the cell-average representation.
double integrate(const ScalarField& f);

/// Sum of values^r * weight. Throws PositivityError if r < 0 and a cell is
/// not strictly positive, or if r is non-integer and a cell is negative.
double integrate_pow(const ScalarField& f, double r);

}  // namespace chemo::model
