#pragma once

// Closed-form constants and thresholds, and trajectory diagnostics checked
// against the boundedness, absorption and persistence statements.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "chemolab/model.hpp"
#include "chemolab/stepper.hpp"
#include "json.hpp"

namespace chemo::analysis {

using model::Coefficients;
using model::Domain;
using model::ScalarField;

/// 2 (chi + 2 - 2 sqrt(chi + 1)) mu, evaluated without cancellation.
double a_chi_mu(double chi, double mu);

/// mu chi^2 / 2 for chi <= 2, 2 mu (chi - 1) otherwise.
double a_chi_mu_upper_bound(double chi, double mu);

struct Verdict {
  bool ok;
  double margin;     // lhs - threshold
  double threshold;  // the right-hand side the lhs is compared against
};

/// a_inf > mu chi^2 / 4 (chi <= 2) or mu (chi - 1) (chi > 2).
Verdict check_main_assumption(const Coefficients& coeffs);

/// p_N = max(2, dim).
int p_n(const Domain& domain);

/// a_inf > a_chi_mu + b_sup |Omega| (p_N - 1) C*^{1/(p_N+1)} max(chi, chi^2) / (4 b_inf delta0).
Verdict check_1_5(const Coefficients& coeffs, const Domain& domain, double delta0, double c_star);

/// a_inf - a_chi_mu (may be <= 0).
double gamma(const Coefficients& coeffs);

/// b_sup |Omega| / gamma; throws PreconditionError unless gamma > 0.
double m1(const Coefficients& coeffs, const Domain& domain);

/// b_sup |Omega| max(1, 1/chi) / gamma; +inf for chi = 0.
double u0_threshold_1_2(const Coefficients& coeffs, const Domain& domain);

/// |Omega|^2 / (2 M1), the p = 1 lower bound on the eventual mass.
double mass_floor(const Coefficients& coeffs, const Domain& domain);

struct QChoice {
  double q;
  double eps;
  double lhs;  // compared against b_inf
};

/// Smallest q on q_grid (with the smallest eps on eps_grid) such that
/// b_sup |Omega| (q - 1)(C*^{1/(q+1)} + eps) max(chi, chi^2) / (4 delta0 gamma) < b_inf.
std::optional<QChoice> q_search(const Coefficients& coeffs, const Domain& domain, double delta0, double c_star,
                                const std::vector<double>& eps_grid, const std::vector<double>& q_grid);

struct ThresholdReport {
  double chi, mu, nu;
  double a_inf, a_sup, b_inf, b_sup;
  int dim;
  double measure;

  double a_chi_mu;
  Verdict main_assumption;
  Verdict cond_1_5;
  double delta0;
  bool delta0_certified;
  double c_star;
  double p = 1.0;
  int p_N;
  double gamma;
  std::optional<double> M1;
  std::optional<QChoice> q_selected;
  double q;             // exponent used for the q-moment (q_selected or p_N + 1)
  bool q_fallback;
  double M0_star;
  std::optional<double> M1_star;
  std::optional<double> M2_star;
  std::string M2_star_source;  // "configured", "estimated" or "unset"
  std::optional<double> u0_threshold_1_2;
  std::optional<double> mass_floor;
};

struct ReportOptions {
  double c_star = 1.0;
  std::optional<double> M2_star;
  std::vector<double> q_grid = {2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0};
  std::vector<double> eps_grid = {1e-3, 1e-2, 1e-1};
};

ThresholdReport threshold_report(const Coefficients& coeffs, const Domain& domain, double delta0,
                                 bool delta0_certified, const ReportOptions& opts = {});

nlohmann::ordered_json to_json(const ThresholdReport& report);

// ---------------------------------------------------------------------------
// Rectangle of moment bounds

struct RectangleSpec {
  double M0_star;
  double M1_star;
  double M2_star;
  double q;

  /// u >= 0 and int u <= M0*(1+slack), int u^-1 <= M1*(1+slack), int u^q <= M2*(1+slack).
  bool member(const ScalarField& u, double slack = 0.0) const;
};

/// Requires M1_star and M2_star to be set.
RectangleSpec rectangle(const ThresholdReport& report);

/// max |u(x) - u(y)| / |x - y|^theta over cell-center pairs; exhaustive in
/// 1D, pairs within `kHolderCap` cells per axis in 2D.
inline constexpr int kHolderCap = 16;
double holder_seminorm(const ScalarField& u, double theta);

// ---------------------------------------------------------------------------
// Diagnostics

struct DiagnosticsRow {
  double t;
  double mass;
  double neg_p_moment;
  double q_moment;
  double min_u;
  double max_u;
  double min_v;
  double holder_seminorm;
  bool rectangle_member;
};

struct DiagnosticsSeries {
  double q = 3.0;
  double theta = 0.5;
  double measure = 1.0;
  std::vector<DiagnosticsRow> rows;

  static const char* header();
  void write_csv(std::ostream& os) const;
};

DiagnosticsRow diagnostics_row(double t, const ScalarField& u, const ScalarField& v, double q, double theta,
                               const RectangleSpec* rect);

/// Recomputes rectangle_member from the row moments (min_u > 0 and the
/// three moment bounds without slack).
void mark_membership(DiagnosticsSeries& s, const RectangleSpec& rect);

/// Observer that appends a row every `row_spacing` accepted steps. `finish`
/// appends the last observed state if it was skipped.
class DiagnosticsRecorder {
 public:
  DiagnosticsRecorder(double q, double theta, std::optional<RectangleSpec> rect = std::nullopt,
                      long row_spacing = 1);

  stepper::Observer observer();
  void finish();
  const DiagnosticsSeries& series() const noexcept { return series_; }

 private:
  void push(double t, const ScalarField& u, const ScalarField& v);

  DiagnosticsSeries series_;
  std::optional<RectangleSpec> rect_;
  long row_spacing_;
  struct Pending {
    double t;
    ScalarField u, v;
  };
  std::optional<Pending> last_;
};

struct RowViolation {
  double t;
  double lhs;
  double rhs;
};

/// mass >= |Omega|^2 / neg_p_moment - slack on every row.
std::vector<RowViolation> check_holder_rows(const DiagnosticsSeries& s, double slack = 1e-10);

/// min_v >= delta0 * mass - slack on every row.
std::vector<RowViolation> check_kernel_rows(const DiagnosticsSeries& s, double delta0, double slack = 1e-10);

/// For every pair of rows r <= t: mass(t) <= max(mass(r), (a_sup/b_inf)|Omega|) (1 + rel).
std::vector<RowViolation> check_mass_comparison(const DiagnosticsSeries& s, const Coefficients& coeffs,
                                                double rel = 1e-6);

/// First tau0 = t - s > 0 at which neg_p_moment <= u0_threshold_1_2.
std::optional<double> check_1_2(const DiagnosticsSeries& s, const ThresholdReport& report, double start);

struct EnvelopeResult {
  double tau;
  double anchor;       // neg_p_moment at the first row with t >= tau
  double M1;
  double M1_tilde;     // identically 0 at p = 1
  std::vector<RowViolation> exponential;  // lhs vs e^{-gamma (t - tau)} anchor + M1 + M1_tilde
  std::vector<RowViolation> max_form;     // lhs vs max(anchor, M1)
  double tail_sup;                        // sup of neg_p_moment over the tail window
  bool tail_ok;                           // tail_sup <= M1 (1 + slack)
  bool ok() const { return exponential.empty() && max_form.empty() && tail_ok; }
};

/// Requires gamma > 0. All comparisons carry `slack` relative slack.
EnvelopeResult envelope_neg_p(const DiagnosticsSeries& s, const ThresholdReport& report, double tau,
                              double tail_fraction = 0.2, double slack = 0.05);

/// exp(-gamma (t - tau)) anchor + M1 at time t.
double envelope_bound(const EnvelopeResult& env, double gamma, double t);

struct PersistenceFloor {
  double min_u;
  double min_v;
  double min_mass;
  bool truncated;
};

/// Minima over rows with t >= t_last - tail_fraction (t_last - t_first).
PersistenceFloor persistence_floor(const DiagnosticsSeries& s, double tail_fraction, bool truncated = false);

/// 1.5 * the largest tail q-moment across the given series.
double estimate_m2_star(const std::vector<DiagnosticsSeries>& ensemble, double tail_fraction);

}  // namespace chemo::analysis
