#include "chemolab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace chemo::model {

namespace {

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

// Neumaier-compensated sum; deterministic for a fixed input order.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Domain

Domain::Domain(int dim, std::array<double, 2> lengths, std::array<int, 2> cells)
    : dim_(dim), lengths_(lengths), cells_(cells) {
  if (dim != 1 && dim != 2) throw ConfigError("dim must be 1 or 2", "domain.dim");
  if (dim == 1) {
    lengths_[1] = 1.0;
    cells_[1] = 1;
  }
  for (int axis = 0; axis < dim; ++axis) {
    if (!finite_positive(lengths_[axis])) throw ConfigError("every length must be > 0", "domain.lengths");
    if (cells_[axis] < 4) throw ConfigError("every cell count must be >= 4", "domain.cells");
  }
  h_ = lengths_[0] / cells_[0];
  if (dim == 2) {
    const double hy = lengths_[1] / cells_[1];
    if (std::abs(hy - h_) > 1e-12 * h_) {
      throw ConfigError("2D cells must be square (lengths[0]/cells[0] == lengths[1]/cells[1])",
                        "domain.cells");
    }
    measure_ = lengths_[0] * lengths_[1];
  } else {
    measure_ = lengths_[0];
  }
  weight_ = measure_ / static_cast<double>(size());
}

Domain Domain::interval(double length, int cells) { return Domain(1, {length, 1.0}, {cells, 1}); }

Domain Domain::rectangle(double lx, double ly, int nx, int ny) { return Domain(2, {lx, ly}, {nx, ny}); }

// ---------------------------------------------------------------------------
// ScalarField / State

ScalarField::ScalarField(Domain domain, std::vector<double> values)
    : domain_(std::move(domain)), values_(std::move(values)) {
  if (values_.size() != domain_.size()) {
    std::ostringstream msg;
    msg << "field has " << values_.size() << " values, domain has " << domain_.size() << " cells";
    throw ConfigError(msg.str());
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ConfigError("field contains a non-finite value");
  }
}

ScalarField::ScalarField(Domain domain, double constant)
    : ScalarField(domain, std::vector<double>(domain.size(), constant)) {}

double ScalarField::min() const { return *std::min_element(values_.begin(), values_.end()); }

double ScalarField::max() const { return *std::max_element(values_.begin(), values_.end()); }

double max_abs_diff(const ScalarField& a, const ScalarField& b) {
  if (!(a.domain() == b.domain())) throw PreconditionError("max_abs_diff: domain mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

State State::checked(double t, ScalarField u) {
  if (!(u.min() > 0.0)) throw PositivityError("state has a non-positive cell");
  return State{t, std::move(u)};
}

// ---------------------------------------------------------------------------
// Coefficient expressions

double FourierTime::operator()(double t) const {
  const double w = 2.0 * std::numbers::pi * t / period;
  double value = offset;
  for (std::size_t k = 0; k < cos_amp.size(); ++k) value += cos_amp[k] * std::cos((k + 1) * w);
  for (std::size_t k = 0; k < sin_amp.size(); ++k) value += sin_amp[k] * std::sin((k + 1) * w);
  return value;
}

bool FourierTime::is_constant() const {
  auto zero = [](double x) { return x == 0.0; };
  return std::all_of(cos_amp.begin(), cos_amp.end(), zero) &&
         std::all_of(sin_amp.begin(), sin_amp.end(), zero);
}

namespace {

// Exact average of the space part over cell (i, j).
double space_cell_average(const SpacePart& sp, const Domain& d, int i, int j) {
  const double h = d.h();
  const std::array<int, 2> idx{i, j};
  double value = sp.offset;
  for (const auto& poly : sp.polynomials) {
    const double x0 = idx[poly.axis] * h;
    const double x1 = x0 + h;
    double p0 = x0, p1 = x1;  // x^(k+1)
    for (std::size_t k = 0; k < poly.coeffs.size(); ++k) {
      value += poly.coeffs[k] * (p1 - p0) / ((k + 1) * h);
      p0 *= x0;
      p1 *= x1;
    }
  }
  for (const auto& c : sp.cosines) {
    if (c.mode == 0) {
      value += c.amp;
      continue;
    }
    const double k = c.mode * std::numbers::pi / d.length(c.axis);
    const double x0 = idx[c.axis] * h;
    value += c.amp * (std::sin(k * (x0 + h)) - std::sin(k * x0)) / (k * h);
  }
  return value;
}

void validate_time(const FourierTime& ft) {
  if (!std::isfinite(ft.offset)) throw ConfigError("time.offset must be finite");
  if (!finite_positive(ft.period)) throw ConfigError("time.period must be > 0");
  for (double a : ft.cos_amp)
    if (!std::isfinite(a)) throw ConfigError("time.cos amplitudes must be finite");
  for (double a : ft.sin_amp)
    if (!std::isfinite(a)) throw ConfigError("time.sin amplitudes must be finite");
}

void validate_space(const SpacePart& sp, int dim) {
  if (!std::isfinite(sp.offset)) throw ConfigError("space.offset must be finite");
  for (const auto& p : sp.polynomials) {
    if (p.axis < 0 || p.axis >= dim) throw ConfigError("space polynomial axis out of range");
    for (double c : p.coeffs)
      if (!std::isfinite(c)) throw ConfigError("space polynomial coefficients must be finite");
  }
  for (const auto& c : sp.cosines) {
    if (c.axis < 0 || c.axis >= dim) throw ConfigError("space cosine axis out of range");
    if (c.mode < 0) throw ConfigError("space cosine mode must be >= 0");
    if (!std::isfinite(c.amp)) throw ConfigError("space cosine amplitude must be finite");
  }
}

void validate_table(const TabulatedExpr& tab, std::optional<std::size_t> cells) {
  if (tab.times.empty()) throw ConfigError("tabulated expression needs at least one time");
  if (tab.values.size() != tab.times.size())
    throw ConfigError("tabulated expression needs one value row per time");
  for (std::size_t k = 0; k < tab.times.size(); ++k) {
    if (!std::isfinite(tab.times[k])) throw ConfigError("tabulated times must be finite");
    if (k > 0 && !(tab.times[k] > tab.times[k - 1]))
      throw ConfigError("tabulated times must be strictly increasing");
    if (cells && tab.values[k].size() != *cells)
      throw ConfigError("tabulated row size does not match the domain cell count");
    if (tab.values[k].size() != tab.values.front().size())
      throw ConfigError("tabulated rows must all have the same size");
    for (double v : tab.values[k])
      if (!std::isfinite(v)) throw ConfigError("tabulated values must be finite");
  }
  if (tab.period) {
    if (!finite_positive(*tab.period)) throw ConfigError("tabulated period must be > 0");
    if (tab.times.back() - tab.times.front() >= *tab.period)
      throw ConfigError("tabulated times must span less than one period");
  }
}

// Interpolated row of a table at time t.
std::vector<double> table_row(const TabulatedExpr& tab, double t) {
  const auto& ts = tab.times;
  const std::size_t n = ts.size();
  if (n == 1) return tab.values.front();
  double tau = t;
  if (tab.period) {
    const double p = *tab.period;
    tau = ts.front() + std::fmod(t - ts.front(), p);
    if (tau < ts.front()) tau += p;
  }
  std::size_t lo = 0, hi = 0;
  double wlo = 1.0;
  if (tau <= ts.front() && !tab.period) {
    return tab.values.front();
  } else if (tau >= ts.back()) {
    if (!tab.period) return tab.values.back();
    lo = n - 1;
    hi = 0;
    const double span = ts.front() + *tab.period - ts.back();
    wlo = 1.0 - (tau - ts.back()) / span;
  } else {
    const auto it = std::upper_bound(ts.begin(), ts.end(), tau);
    hi = static_cast<std::size_t>(it - ts.begin());
    lo = hi - 1;
    wlo = 1.0 - (tau - ts[lo]) / (ts[hi] - ts[lo]);
  }
  if (tab.interp == Interp::previous) return tab.values[lo];
  std::vector<double> row(tab.values[lo].size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    row[i] = wlo * tab.values[lo][i] + (1.0 - wlo) * tab.values[hi][i];
  }
  return row;
}

}  // namespace

void validate(const CoeffExpr& expr, const Domain& domain) {
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ConstantExpr>) {
          if (!std::isfinite(e.value)) throw ConfigError("constant value must be finite");
        } else if constexpr (std::is_same_v<T, SeparableExpr>) {
          validate_time(e.time);
          validate_space(e.space, domain.dim());
        } else {
          validate_table(e, domain.size());
        }
      },
      expr);
}

bool is_time_independent(const CoeffExpr& expr) {
  return std::visit(
      [](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ConstantExpr>) {
          return true;
        } else if constexpr (std::is_same_v<T, SeparableExpr>) {
          return e.time.is_constant();
        } else {
          return e.times.size() == 1;
        }
      },
      expr);
}

ScalarField eval_coeff(const CoeffExpr& expr, double t, const Domain& domain) {
  validate(expr, domain);
  return std::visit(
      [&](const auto& e) -> ScalarField {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ConstantExpr>) {
          return ScalarField(domain, e.value);
        } else if constexpr (std::is_same_v<T, SeparableExpr>) {
          const double tf = e.time(t);
          std::vector<double> values(domain.size());
          for (int j = 0; j < domain.ny(); ++j) {
            for (int i = 0; i < domain.nx(); ++i) {
              values[domain.index(i, j)] = tf * space_cell_average(e.space, domain, i, j);
            }
          }
          return ScalarField(domain, std::move(values));
        } else {
          return ScalarField(domain, table_row(e, t));
        }
      },
      expr);
}

AuditReport coeff_audit(const CoeffExpr& expr, double claimed_inf, double claimed_sup, double t0,
                        double t1, int samples, const Domain& domain) {
  if (samples < 1000) throw PreconditionError("coeff_audit needs at least 1000 time samples");
  AuditReport rep{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                  claimed_inf, claimed_sup, samples, false};
  for (int k = 0; k < samples; ++k) {
    const double t = t0 + (t1 - t0) * static_cast<double>(k) / (samples - 1);
    const ScalarField f = eval_coeff(expr, t, domain);
    rep.observed_min = std::min(rep.observed_min, f.min());
    rep.observed_max = std::max(rep.observed_max, f.max());
  }
  rep.pass = rep.observed_min >= claimed_inf && rep.observed_max <= claimed_sup;
  return rep;
}

// ---------------------------------------------------------------------------
// Coefficients

namespace {

// Checks f(t) == f(t + T) on a few sample times, without needing a domain.
bool periodic_with(const CoeffExpr& expr, double period) {
  constexpr int kSamples = 16;
  return std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ConstantExpr>) {
          return true;
        } else if constexpr (std::is_same_v<T, SeparableExpr>) {
          for (int k = 0; k < kSamples; ++k) {
            const double t = period * k / kSamples;
            if (std::abs(e.time(t) - e.time(t + period)) > 1e-12) return false;
          }
          return true;
        } else {
          if (e.times.size() == 1) return true;
          for (int k = 0; k < kSamples; ++k) {
            const double t = e.times.front() + period * k / kSamples;
            const auto r0 = table_row(e, t);
            const auto r1 = table_row(e, t + period);
            for (std::size_t i = 0; i < r0.size(); ++i)
              if (std::abs(r0[i] - r1[i]) > 1e-12) return false;
          }
          return true;
        }
      },
      expr);
}

void check_expr_shape(const CoeffExpr& expr, const char* path) {
  try {
    std::visit(
        [](const auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, ConstantExpr>) {
            if (!std::isfinite(e.value)) throw ConfigError("constant value must be finite");
          } else if constexpr (std::is_same_v<T, SeparableExpr>) {
            validate_time(e.time);
            validate_space(e.space, 2);
          } else {
            validate_table(e, std::nullopt);
          }
        },
        expr);
  } catch (const ConfigError& err) {
    throw ConfigError(err.what(), path);
  }
}

ScalarField checked_eval(const CoeffExpr& expr, const Bounds& bounds, double t, const Domain& d,
                         const char* name) {
  ScalarField f = eval_coeff(expr, t, d);
  const double lo = bounds.inf - 1e-12 * std::max(1.0, std::abs(bounds.inf));
  const double hi = bounds.sup + 1e-12 * std::max(1.0, std::abs(bounds.sup));
  if (f.min() < lo || f.max() > hi) {
    std::ostringstream msg;
    msg << name << "(t=" << t << ") range [" << f.min() << ", " << f.max()
        << "] leaves the declared bounds [" << bounds.inf << ", " << bounds.sup << "]";
    throw ConfigError(msg.str(), std::string("coefficients.") + name);
  }
  return f;
}

}  // namespace

Coefficients::Coefficients(double chi, double mu, double nu, CoeffExpr a, CoeffExpr b,
                           Bounds a_bounds, Bounds b_bounds, std::optional<double> period)
    : chi_(chi), mu_(mu), nu_(nu), a_(std::move(a)), b_(std::move(b)), a_bounds_(a_bounds),
      b_bounds_(b_bounds), period_(period) {
  if (!(std::isfinite(chi) && chi >= 0.0)) throw ConfigError("chi must be >= 0", "coefficients.chi");
  if (!finite_positive(mu)) throw ConfigError("mu must be > 0", "coefficients.mu");
  if (!finite_positive(nu)) throw ConfigError("nu must be > 0", "coefficients.nu");
  if (!(finite_positive(a_bounds.inf) && std::isfinite(a_bounds.sup) && a_bounds.inf <= a_bounds.sup))
    throw ConfigError("need 0 < a_inf <= a_sup", "coefficients.a_inf");
  if (!(finite_positive(b_bounds.inf) && std::isfinite(b_bounds.sup) && b_bounds.inf <= b_bounds.sup))
    throw ConfigError("need 0 < b_inf <= b_sup", "coefficients.b_inf");
  check_expr_shape(a_, "coefficients.a");
  check_expr_shape(b_, "coefficients.b");
  if (period_) {
    if (!finite_positive(*period_)) throw ConfigError("period must be > 0", "coefficients.period");
    if (!periodic_with(a_, *period_)) throw ConfigError("a is not periodic with the declared period", "coefficients.period");
    if (!periodic_with(b_, *period_)) throw ConfigError("b is not periodic with the declared period", "coefficients.period");
  }
}

Coefficients Coefficients::constant(double chi, double mu, double nu, double a, double b) {
  return Coefficients(chi, mu, nu, ConstantExpr{a}, ConstantExpr{b}, {a, a}, {b, b});
}

bool Coefficients::time_independent() const {
  return is_time_independent(a_) && is_time_independent(b_);
}

ScalarField Coefficients::a(double t, const Domain& domain) const {
  return checked_eval(a_, a_bounds_, t, domain, "a");
}

ScalarField Coefficients::b(double t, const Domain& domain) const {
  return checked_eval(b_, b_bounds_, t, domain, "b");
}

Coefficients Coefficients::with_period(double period) const {
  return Coefficients(chi_, mu_, nu_, a_, b_, a_bounds_, b_bounds_, period);
}

Coefficients Coefficients::with_chi(double chi) const {
  return Coefficients(chi, mu_, nu_, a_, b_, a_bounds_, b_bounds_, period_);
}

// ---------------------------------------------------------------------------
// Quadrature

double integrate(const ScalarField& f) {
  CompensatedSum s;
  for (double v : f.values()) s.add(v);
  return s.value() * f.domain().weight();
}

double integrate_pow(const ScalarField& f, double r) {
  const bool integral_power = std::floor(r) == r;
  CompensatedSum s;
  for (double v : f.values()) {
    if (r < 0.0 && !(v > 0.0)) throw PositivityError("integrate_pow: negative power of a non-positive cell");
    if (!integral_power && v < 0.0) throw PositivityError("integrate_pow: fractional power of a negative cell");
    s.add(std::pow(v, r));
  }
  return s.value() * f.domain().weight();
}

}  // namespace chemo::model
