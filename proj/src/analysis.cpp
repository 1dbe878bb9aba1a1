#include "chemolab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace chemo::analysis {

double a_chi_mu(double chi, double mu) {
  // chi + 2 - 2 sqrt(chi + 1) = (sqrt(chi + 1) - 1)^2 = (chi / (sqrt(chi + 1) + 1))^2
  const double r = chi / (std::sqrt(chi + 1.0) + 1.0);
  return 2.0 * mu * r * r;
}

double a_chi_mu_upper_bound(double chi, double mu) {
  return chi <= 2.0 ? mu * chi * chi / 2.0 : 2.0 * mu * (chi - 1.0);
}

Verdict check_main_assumption(const Coefficients& c) {
  const double chi = c.chi(), mu = c.mu();
  const double threshold = chi <= 2.0 ? mu * chi * chi / 4.0 : mu * (chi - 1.0);
  return {c.a_inf() > threshold, c.a_inf() - threshold, threshold};
}

int p_n(const Domain& domain) { return std::max(2, domain.dim()); }

Verdict check_1_5(const Coefficients& c, const Domain& domain, double delta0, double c_star) {
  if (!(delta0 > 0.0)) throw PreconditionError("check_1_5: delta0 must be > 0");
  if (!(c_star > 0.0)) throw PreconditionError("check_1_5: C* must be > 0");
  const int pn = p_n(domain);
  const double chi = c.chi();
  const double term = c.b_sup() * domain.measure() * (pn - 1) * std::pow(c_star, 1.0 / (pn + 1)) *
                      std::max(chi, chi * chi) / (4.0 * c.b_inf() * delta0);
  const double rhs = a_chi_mu(chi, c.mu()) + term;
  return {c.a_inf() > rhs, c.a_inf() - rhs, rhs};
}

double gamma(const Coefficients& c) { return c.a_inf() - a_chi_mu(c.chi(), c.mu()); }

double m1(const Coefficients& c, const Domain& domain) {
  const double g = gamma(c);
  if (!(g > 0.0)) throw PreconditionError("M1 requires a_inf > a_chi_mu");
  return c.b_sup() * domain.measure() / g;
}

double u0_threshold_1_2(const Coefficients& c, const Domain& domain) {
  if (c.chi() == 0.0) return std::numeric_limits<double>::infinity();
  return m1(c, domain) * std::max(1.0, 1.0 / c.chi());
}

double mass_floor(const Coefficients& c, const Domain& domain) {
  const double w = domain.measure();
  return w * w / (2.0 * m1(c, domain));
}

std::optional<QChoice> q_search(const Coefficients& c, const Domain& domain, double delta0, double c_star,
                                const std::vector<double>& eps_grid, const std::vector<double>& q_grid) {
  const double g = gamma(c);
  if (!(g > 0.0)) throw PreconditionError("q_search requires a_inf > a_chi_mu");
  std::vector<double> qs = q_grid, es = eps_grid;
  std::sort(qs.begin(), qs.end());
  std::sort(es.begin(), es.end());
  const double chi = c.chi();
  const double pn = p_n(domain);
  for (double q : qs) {
    if (!(q > pn)) continue;
    for (double eps : es) {
      if (!(eps > 0.0)) continue;
      const double lhs = c.b_sup() * domain.measure() * (q - 1.0) * (std::pow(c_star, 1.0 / (q + 1.0)) + eps) *
                         std::max(chi, chi * chi) / (4.0 * delta0 * g);
      if (lhs < c.b_inf()) return QChoice{q, eps, lhs};
    }
  }
  return std::nullopt;
}

ThresholdReport threshold_report(const Coefficients& c, const Domain& domain, double delta0, bool delta0_certified,
                                 const ReportOptions& opts) {
  ThresholdReport r;
  r.chi = c.chi();
  r.mu = c.mu();
  r.nu = c.nu();
  r.a_inf = c.a_inf();
  r.a_sup = c.a_sup();
  r.b_inf = c.b_inf();
  r.b_sup = c.b_sup();
  r.dim = domain.dim();
  r.measure = domain.measure();
  r.a_chi_mu = a_chi_mu(c.chi(), c.mu());
  r.main_assumption = check_main_assumption(c);
  r.cond_1_5 = check_1_5(c, domain, delta0, opts.c_star);
  r.delta0 = delta0;
  r.delta0_certified = delta0_certified;
  r.c_star = opts.c_star;
  r.p_N = p_n(domain);
  r.gamma = gamma(c);
  if (r.gamma > 0.0) {
    r.M1 = m1(c, domain);
    r.q_selected = q_search(c, domain, delta0, opts.c_star, opts.eps_grid, opts.q_grid);
    r.u0_threshold_1_2 = u0_threshold_1_2(c, domain);
    r.mass_floor = mass_floor(c, domain);
  }
  r.q_fallback = !r.q_selected.has_value();
  r.q = r.q_selected ? r.q_selected->q : r.p_N + 1.0;
  r.M0_star = c.a_sup() / c.b_inf() * domain.measure();
  r.M1_star = r.M1;
  r.M2_star = opts.M2_star;
  r.M2_star_source = opts.M2_star ? "configured" : "unset";
  return r;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

nlohmann::ordered_json verdict_json(const Verdict& v) {
  nlohmann::ordered_json j;
  j["ok"] = v.ok;
  j["margin"] = v.margin;
  j["threshold"] = v.threshold;
  return j;
}

}  // namespace

nlohmann::ordered_json to_json(const ThresholdReport& r) {
  nlohmann::ordered_json j;
  j["chi"] = r.chi;
  j["mu"] = r.mu;
  j["nu"] = r.nu;
  j["a_inf"] = r.a_inf;
  j["a_sup"] = r.a_sup;
  j["b_inf"] = r.b_inf;
  j["b_sup"] = r.b_sup;
  j["dim"] = r.dim;
  j["measure"] = r.measure;
  j["a_chi_mu"] = r.a_chi_mu;
  j["main_assumption"] = verdict_json(r.main_assumption);
  j["cond_1_5"] = verdict_json(r.cond_1_5);
  j["delta0"] = r.delta0;
  j["delta0_certified"] = r.delta0_certified;
  j["C_star"] = r.c_star;
  j["p"] = r.p;
  j["p_N"] = r.p_N;
  j["gamma"] = r.gamma;
  j["M1"] = opt(r.M1);
  if (r.q_selected) {
    j["q_selected"] = {{"q", r.q_selected->q}, {"eps", r.q_selected->eps}, {"lhs", r.q_selected->lhs}};
  } else {
    j["q_selected"] = nullptr;
  }
  j["q"] = r.q;
  j["q_fallback"] = r.q_fallback;
  j["M0_star"] = r.M0_star;
  j["M1_star"] = opt(r.M1_star);
  j["M2_star"] = opt(r.M2_star);
  j["M2_star_source"] = r.M2_star_source;
  j["u0_threshold_1_2"] = opt(r.u0_threshold_1_2);
  j["mass_floor"] = opt(r.mass_floor);
  return j;
}

bool RectangleSpec::member(const ScalarField& u, double slack) const {
  if (u.min() <= 0.0) return false;  // int u^-1 is infinite on a zero cell
  const double f = 1.0 + slack;
  return model::integrate(u) <= M0_star * f && model::integrate_pow(u, -1.0) <= M1_star * f &&
         model::integrate_pow(u, q) <= M2_star * f;
}

RectangleSpec rectangle(const ThresholdReport& r) {
  if (!r.M1_star) throw PreconditionError("rectangle: M1* undefined (gamma <= 0)");
  if (!r.M2_star) throw PreconditionError("rectangle: M2* is neither configured nor estimated");
  return {r.M0_star, *r.M1_star, *r.M2_star, r.q};
}

double holder_seminorm(const ScalarField& u, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw PreconditionError("holder_seminorm: theta must lie in (0, 1)");
  const model::Domain& d = u.domain();
  const double h = d.h();
  double best = 0.0;
  if (d.dim() == 1) {
    const int n = d.nx();
    std::vector<double> scale(n);
    for (int k = 1; k < n; ++k) scale[k] = std::pow(k * h, theta);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) best = std::max(best, std::abs(u[i] - u[j]) / scale[j - i]);
    return best;
  }
  const int nx = d.nx(), ny = d.ny(), cap = kHolderCap;
  std::vector<double> scale((cap + 1) * (2 * cap + 1));
  auto sidx = [cap](int di, int dj) { return di * (2 * cap + 1) + (dj + cap); };
  for (int di = 0; di <= cap; ++di)
    for (int dj = -cap; dj <= cap; ++dj)
      scale[sidx(di, dj)] = std::pow(h * std::sqrt(double(di * di + dj * dj)), theta);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double ui = u[d.index(i, j)];
      for (int di = 0; di <= cap && i + di < nx; ++di) {
        for (int dj = -cap; dj <= cap; ++dj) {
          if (di == 0 && dj <= 0) continue;
          const int jj = j + dj;
          if (jj < 0 || jj >= ny) continue;
          best = std::max(best, std::abs(ui - u[d.index(i + di, jj)]) / scale[sidx(di, dj)]);
        }
      }
    }
  }
  return best;
}

const char* DiagnosticsSeries::header() {
  return "t,mass,neg_p_moment,q_moment,min_u,max_u,min_v,holder_seminorm,rectangle_member";
}

void DiagnosticsSeries::write_csv(std::ostream& os) const {
  os << header() << '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.t, r.mass,
                  r.neg_p_moment, r.q_moment, r.min_u, r.max_u, r.min_v, r.holder_seminorm,
                  r.rectangle_member ? 1 : 0);
    os << buf;
  }
}

DiagnosticsRow diagnostics_row(double t, const ScalarField& u, const ScalarField& v, double q, double theta,
                               const RectangleSpec* rect) {
  DiagnosticsRow r;
  r.t = t;
  r.mass = model::integrate(u);
  r.neg_p_moment = model::integrate_pow(u, -1.0);
  r.q_moment = model::integrate_pow(u, q);
  r.min_u = u.min();
  r.max_u = u.max();
  r.min_v = v.min();
  r.holder_seminorm = holder_seminorm(u, theta);
  r.rectangle_member = rect != nullptr && rect->member(u);
  return r;
}

void mark_membership(DiagnosticsSeries& s, const RectangleSpec& rect) {
  for (auto& r : s.rows)
    r.rectangle_member = r.min_u > 0.0 && r.mass <= rect.M0_star && r.neg_p_moment <= rect.M1_star &&
                         r.q_moment <= rect.M2_star;
}

DiagnosticsRecorder::DiagnosticsRecorder(double q, double theta, std::optional<RectangleSpec> rect,
                                         long row_spacing)
    : rect_(std::move(rect)), row_spacing_(std::max(1L, row_spacing)) {
  series_.q = q;
  series_.theta = theta;
}

void DiagnosticsRecorder::push(double t, const ScalarField& u, const ScalarField& v) {
  series_.measure = u.domain().measure();
  series_.rows.push_back(diagnostics_row(t, u, v, series_.q, series_.theta, rect_ ? &*rect_ : nullptr));
}

stepper::Observer DiagnosticsRecorder::observer() {
  return [this](const stepper::Sample& s) {
    if (s.step % row_spacing_ == 0) {
      push(s.t, s.u, s.v);
      last_.reset();
    } else {
      last_.emplace(Pending{s.t, s.u, s.v});
    }
  };
}

void DiagnosticsRecorder::finish() {
  if (last_ && (series_.rows.empty() || series_.rows.back().t < last_->t)) push(last_->t, last_->u, last_->v);
  last_.reset();
}

std::vector<RowViolation> check_holder_rows(const DiagnosticsSeries& s, double slack) {
  std::vector<RowViolation> out;
  for (const auto& r : s.rows) {
    const double rhs = s.measure * s.measure / r.neg_p_moment;
    if (r.mass < rhs - slack) out.push_back({r.t, r.mass, rhs});
  }
  return out;
}

std::vector<RowViolation> check_kernel_rows(const DiagnosticsSeries& s, double delta0, double slack) {
  std::vector<RowViolation> out;
  for (const auto& r : s.rows) {
    const double rhs = delta0 * r.mass;
    if (r.min_v < rhs - slack) out.push_back({r.t, r.min_v, rhs});
  }
  return out;
}

std::vector<RowViolation> check_mass_comparison(const DiagnosticsSeries& s, const Coefficients& c, double rel) {
  std::vector<RowViolation> out;
  const double k = c.a_sup() / c.b_inf() * s.measure;
  double later_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = s.rows.size(); i-- > 0;) {
    later_max = std::max(later_max, s.rows[i].mass);
    const double bound = std::max(s.rows[i].mass, k) * (1.0 + rel);
    if (later_max > bound) out.push_back({s.rows[i].t, later_max, bound});
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::optional<double> check_1_2(const DiagnosticsSeries& s, const ThresholdReport& report, double start) {
  if (!(report.gamma > 0.0)) throw PreconditionError("check_1_2 requires gamma > 0");
  const double rhs = *report.u0_threshold_1_2;
  for (const auto& r : s.rows)
    if (r.t > start && r.neg_p_moment <= rhs) return r.t - start;
  return std::nullopt;
}

EnvelopeResult envelope_neg_p(const DiagnosticsSeries& s, const ThresholdReport& report, double tau,
                              double tail_fraction, double slack) {
  if (!(report.gamma > 0.0)) throw PreconditionError("envelope_neg_p requires gamma > 0");
  auto it = std::find_if(s.rows.begin(), s.rows.end(), [tau](const DiagnosticsRow& r) { return r.t >= tau; });
  if (it == s.rows.end()) throw PreconditionError("envelope_neg_p: tau lies beyond the series");
  EnvelopeResult env;
  env.tau = it->t;
  env.anchor = it->neg_p_moment;
  env.M1 = *report.M1;
  env.M1_tilde = 0.0;
  const double f = 1.0 + slack;
  for (auto r = it; r != s.rows.end(); ++r) {
    const double exp_bound = envelope_bound(env, report.gamma, r->t);
    if (r->neg_p_moment > exp_bound * f) env.exponential.push_back({r->t, r->neg_p_moment, exp_bound});
    const double max_bound = std::max(env.anchor, env.M1);
    if (r->neg_p_moment > max_bound * f) env.max_form.push_back({r->t, r->neg_p_moment, max_bound});
  }
  const double t_last = s.rows.back().t;
  const double tail_start = t_last - tail_fraction * (t_last - env.tau);
  env.tail_sup = 0.0;
  for (auto r = it; r != s.rows.end(); ++r)
    if (r->t >= tail_start) env.tail_sup = std::max(env.tail_sup, r->neg_p_moment);
  env.tail_ok = env.tail_sup <= env.M1 * f;
  return env;
}

double envelope_bound(const EnvelopeResult& env, double gamma, double t) {
  return std::exp(-gamma * (t - env.tau)) * env.anchor + env.M1 + env.M1_tilde;
}

PersistenceFloor persistence_floor(const DiagnosticsSeries& s, double tail_fraction, bool truncated) {
  if (!(tail_fraction > 0.0 && tail_fraction < 1.0))
    throw PreconditionError("persistence_floor: tail_fraction must lie in (0, 1)");
  if (s.rows.empty()) throw PreconditionError("persistence_floor: empty series");
  const double t0 = s.rows.front().t, t1 = s.rows.back().t;
  const double start = t1 - tail_fraction * (t1 - t0);
  PersistenceFloor pf{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity(), truncated};
  for (const auto& r : s.rows) {
    if (r.t < start) continue;
    pf.min_u = std::min(pf.min_u, r.min_u);
    pf.min_v = std::min(pf.min_v, r.min_v);
    pf.min_mass = std::min(pf.min_mass, r.mass);
  }
  return pf;
}

double estimate_m2_star(const std::vector<DiagnosticsSeries>& ensemble, double tail_fraction) {
  double m = 0.0;
  for (const auto& s : ensemble) {
    if (s.rows.empty()) continue;
    const double t0 = s.rows.front().t, t1 = s.rows.back().t;
    const double start = t1 - tail_fraction * (t1 - t0);
    for (const auto& r : s.rows)
      if (r.t >= start) m = std::max(m, r.q_moment);
  }
  if (!(m > 0.0)) throw PreconditionError("estimate_m2_star: no tail rows");
  return 1.5 * m;
}

}  // namespace chemo::analysis
