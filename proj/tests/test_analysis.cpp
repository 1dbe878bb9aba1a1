#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "chemolab/analysis.hpp"

using namespace chemo;
using namespace chemo::analysis;
using model::Domain;

namespace {

// Direct (cancellation-prone) evaluation used as an oracle away from chi = 0.
double a_chi_mu_naive(double chi, double mu) { return 2.0 * (chi + 2.0 - 2.0 * std::sqrt(chi + 1.0)) * mu; }

model::Coefficients coeffs(double chi, double mu, double a_inf, double a_sup, double b_inf, double b_sup) {
  model::SeparableExpr a;
  a.time = model::FourierTime{};
  a.space.offset = 0.5 * (a_inf + a_sup);
  a.space.cosines = {{0, 1, 0.5 * (a_sup - a_inf)}};
  model::SeparableExpr b;
  b.time = model::FourierTime{};
  b.space.offset = 0.5 * (b_inf + b_sup);
  b.space.cosines = {{0, 1, 0.5 * (b_sup - b_inf)}};
  return model::Coefficients(chi, mu, 1.0, a, b, {a_inf, a_sup}, {b_inf, b_sup});
}

ThresholdReport example_report(std::optional<double> m2 = std::nullopt) {
  ReportOptions o;
  o.M2_star = m2;
  return threshold_report(model::Coefficients::constant(1.0, 1.0, 1.0, 2.0, 1.0), Domain::interval(1.0, 16), 0.5,
                          true, o);
}

DiagnosticsRow row(double t, double mass, double negp, double qm = 1.0) {
  return {t, mass, negp, qm, 1.0, 1.0, 1.0, 0.0, false};
}

}  // namespace

TEST_CASE("a_chi_mu examples") {
  CHECK(a_chi_mu(3.0, 1.0) == 2.0);
  CHECK(a_chi_mu(2.0, 1.0) == doctest::Approx(2.0 * (4.0 - 2.0 * std::sqrt(3.0))).epsilon(1e-14));
  CHECK(a_chi_mu(2.0, 1.0) == doctest::Approx(1.071797).epsilon(1e-6));
  CHECK(a_chi_mu(1e-12, 1.0) >= 0.0);
  CHECK(a_chi_mu(1e-12, 1.0) <= 1e-24);
  CHECK(a_chi_mu(0.0, 1.0) == 0.0);
}

TEST_CASE("a_chi_mu bounds and closed form on 10^4 random samples") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> chi_d(1e-6, 50.0), mu_d(1e-3, 20.0);
  for (int k = 0; k < 10000; ++k) {
    const double chi = k % 2 ? chi_d(rng) : chi_d(rng) / 25.0, mu = mu_d(rng);
    const double v = a_chi_mu(chi, mu);
    const double bound = chi <= 2.0 ? mu * chi * chi / 2.0 : 2.0 * mu * (chi - 1.0);
    CHECK(v <= bound + 1e-12);
    CHECK(a_chi_mu_upper_bound(chi, mu) == bound);
    if (chi > 0.1) CHECK(std::abs(v - a_chi_mu_naive(chi, mu)) <= 1e-12 * std::max(1.0, v));
  }
}

TEST_CASE("check_main_assumption examples") {
  const auto v1 = check_main_assumption(model::Coefficients::constant(2.0, 1.0, 1.0, 1.01, 1.0));
  CHECK(v1.ok);
  CHECK(v1.threshold == 1.0);
  CHECK(v1.margin == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_FALSE(check_main_assumption(model::Coefficients::constant(2.0, 1.0, 1.0, 1.0, 1.0)).ok);
  const auto v3 = check_main_assumption(model::Coefficients::constant(4.0, 1.0, 1.0, 4.0, 1.0));
  CHECK(v3.ok);
  CHECK(v3.threshold == 3.0);
  CHECK(v3.margin == 1.0);
}

TEST_CASE("check_1_5 examples") {
  const Domain d = Domain::interval(1.0, 16);
  const auto c = model::Coefficients::constant(1.0, 1.0, 1.0, 2.0, 1.0);
  const auto v = check_1_5(c, d, 0.5, 1.0);
  // Hand evaluation: 2(3 - 2 sqrt 2) + 1 / (4 * 0.5).
  const double rhs = 2.0 * (3.0 - 2.0 * std::sqrt(2.0)) + 0.5;
  CHECK(std::abs(v.threshold - rhs) <= 1e-12);
  CHECK(std::abs(v.threshold - 0.843146) <= 1e-6);
  CHECK(v.ok);
  CHECK(std::abs(v.margin - 1.156854) <= 1e-6);
  CHECK(check_1_5(c, d, 0.5, 1e-60).threshold == doctest::Approx(a_chi_mu(1.0, 1.0)).epsilon(1e-12));
  const double term1 = v.threshold - a_chi_mu(1.0, 1.0);
  const double term2 = check_1_5(c, d, 0.25, 1.0).threshold - a_chi_mu(1.0, 1.0);
  CHECK(term2 == doctest::Approx(2.0 * term1).epsilon(1e-12));
  CHECK_THROWS_AS(check_1_5(c, d, 0.0, 1.0), PreconditionError);
}

TEST_CASE("gamma implies M1 and (1.5)' implies gamma > 0 (property)") {
  std::mt19937_64 rng(100);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const double chi = 4.0 * u01(rng) + 1e-3, mu = 0.1 + 3.0 * u01(rng);
    const double b_inf = 0.2 + u01(rng), b_sup = b_inf * (1.0 + u01(rng));
    const double a_inf = a_chi_mu(chi, mu) + 0.01 + 3.0 * u01(rng), a_sup = a_inf * (1.0 + u01(rng));
    const double len = 0.5 + 2.0 * u01(rng);
    const Domain d = Domain::interval(len, 8);
    const auto c = coeffs(chi, mu, a_inf, a_sup, b_inf, b_sup);
    const double g = a_inf - 2.0 * mu * std::pow(chi / (std::sqrt(chi + 1.0) + 1.0), 2.0);
    CHECK(std::abs(m1(c, d) - b_sup * len / g) <= 1e-12 * std::max(1.0, b_sup * len / g));
    const double delta0 = 0.05 + u01(rng);
    if (check_1_5(c, d, delta0, 1.0).ok) CHECK(gamma(c) > 0.0);
  }
  CHECK_THROWS_AS(m1(model::Coefficients::constant(3.0, 1.0, 1.0, 2.0, 1.0), Domain::interval(1.0, 8)),
                  PreconditionError);
}

TEST_CASE("q_search examples") {
  const Domain d = Domain::interval(1.0, 16);
  const auto c = model::Coefficients::constant(1.0, 1.0, 1.0, 2.0, 1.0);
  const auto q = q_search(c, d, 0.5, 1.0, {1e-3}, {2.5, 3.0, 4.0});
  REQUIRE(q);
  CHECK(q->q == 2.5);
  CHECK(q->eps == 1e-3);
  const double lhs = 1.5 * (std::pow(1.0, 1.0 / 3.5) + 1e-3) / (4.0 * 0.5 * (2.0 - a_chi_mu(1.0, 1.0)));
  CHECK(q->lhs == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(q->lhs < 1.0);
  CHECK_FALSE(q_search(c, d, 0.5, 1e40, {1e-3}, {2.5, 3.0, 4.0}));
  const auto q2 = q_search(c, d, 0.5, 1.0, {0.1, 1e-3, 1e-2}, {2.5, 3.0, 4.0});
  REQUIRE(q2);
  CHECK(q2->eps == 1e-3);
  CHECK_FALSE(q_search(c, d, 0.5, 1.0, {1e-3}, {1.5, 2.0}));  // q must exceed p_N
}

TEST_CASE("threshold report and JSON key order") {
  const ThresholdReport r = example_report();
  CHECK(r.cond_1_5.ok);
  CHECK(r.gamma > 0.0);
  REQUIRE(r.M1);
  CHECK(*r.M1 == doctest::Approx(1.0 / r.gamma).epsilon(1e-14));
  CHECK(*r.mass_floor == doctest::Approx(1.0 / (2.0 * *r.M1)).epsilon(1e-14));
  CHECK(r.M2_star_source == "unset");
  CHECK(r.q == 2.5);
  CHECK_FALSE(r.q_fallback);
  const auto j = to_json(r);
  CHECK(j.begin().key() == "chi");
  CHECK(j["M2_star"].is_null());
  CHECK(j.dump() == to_json(example_report()).dump());

  const ThresholdReport bad =
      threshold_report(model::Coefficients::constant(3.0, 1.0, 1.0, 1.0, 1.0), Domain::interval(1.0, 8), 0.5, true);
  CHECK_FALSE(bad.M1);
  CHECK(bad.q_fallback);
  CHECK(bad.q == 3.0);
  CHECK(to_json(bad)["M1"].is_null());
}

TEST_CASE("rectangle membership") {
  const Domain d = Domain::interval(1.0, 16);
  const ThresholdReport r = example_report(10.0);
  const RectangleSpec rect = rectangle(r);
  const double c = r.a_sup / r.b_inf;
  CHECK(rect.M0_star == c);
  CHECK(rect.member(ScalarField(d, c)));  // inclusive on the mass boundary
  CHECK_FALSE(rect.member(ScalarField(d, 0.0)));
  CHECK_FALSE(rect.member(ScalarField(d, 2.0 * c)));
  CHECK_THROWS_AS(rectangle(example_report()), PreconditionError);

  // Convexity: blends of a member with the constant c stay members.
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uv(1.4, 2.4), sv(0.0, 1.0);
  int members = 0;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> u(d.size()), w(d.size());
    for (double& x : u) x = uv(rng);
    const double s = sv(rng);
    for (std::size_t i = 0; i < u.size(); ++i) w[i] = (1.0 - s) * u[i] + s * c;
    const ScalarField uf(d, u), wf(d, w);
    if (rect.member(uf)) {
      ++members;
      CHECK(rect.member(wf));
    }
  }
  CHECK(members > 10);
}

TEST_CASE("holder seminorm") {
  const Domain d = Domain::interval(1.0, 64);
  CHECK(holder_seminorm(ScalarField(d, 3.0), 0.5) == 0.0);
  std::vector<double> x(64);
  for (int i = 0; i < 64; ++i) x[i] = d.center(0, i);
  CHECK(holder_seminorm(ScalarField(d, x), 0.5) == doctest::Approx(std::sqrt(1.0 - d.h())).epsilon(1e-14));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uv(-1.0, 1.0);
  for (const Domain& dd : {Domain::interval(1.0, 40), Domain::rectangle(1.0, 1.0, 10, 10)}) {
    for (int k = 0; k < 50; ++k) {
      std::vector<double> u(dd.size()), cu(dd.size());
      const double c = 5.0 * uv(rng);
      for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = uv(rng);
        cu[i] = c * u[i];
      }
      const double a = holder_seminorm(ScalarField(dd, u), 0.3), b = holder_seminorm(ScalarField(dd, cu), 0.3);
      CHECK(b == doctest::Approx(std::abs(c) * a).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(holder_seminorm(ScalarField(d, 1.0), 1.0), PreconditionError);
}

TEST_CASE("row checks") {
  DiagnosticsSeries s;
  s.measure = 1.0;
  s.rows = {row(0.0, 1.0, 1.0), row(1.0, 2.0, 0.6), row(2.0, 0.5, 2.5)};
  CHECK(check_holder_rows(s).empty());
  s.rows.push_back(row(3.0, 0.5, 1.5));  // 0.5 < 1/1.5
  const auto v = check_holder_rows(s);
  REQUIRE(v.size() == 1);
  CHECK(v[0].t == 3.0);

  DiagnosticsSeries m;
  m.measure = 1.0;
  const auto c = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);  // K = 1
  m.rows = {row(0.0, 3.0, 1.0), row(1.0, 2.0, 1.0), row(2.0, 1.5, 1.0)};
  CHECK(check_mass_comparison(m, c).empty());
  m.rows.push_back(row(3.0, 2.5, 1.0));  // exceeds max(mass(2), K) = 1.5
  const auto mv = check_mass_comparison(m, c);
  CHECK_FALSE(mv.empty());
  CHECK(mv.back().t == 2.0);

  DiagnosticsSeries k;
  k.rows = {row(0.0, 1.0, 1.0)};
  k.rows[0].min_v = 0.4;
  CHECK(check_kernel_rows(k, 0.3).empty());
  CHECK(check_kernel_rows(k, 0.5).size() == 1);
}

TEST_CASE("check_1_2 and envelope at the constant equilibrium") {
  const Domain d = Domain::interval(1.0, 16);
  // chi = 1, a = b = 1: gamma = 1 - 0.343 = 0.657, M1 = 1.522.
  const auto c = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  const ThresholdReport r = threshold_report(c, d, 0.5, true);
  CHECK(r.gamma == doctest::Approx(0.656854).epsilon(1e-6));
  CHECK(*r.M1 == doctest::Approx(1.522408).epsilon(1e-6));
  DiagnosticsSeries s;
  s.measure = 1.0;
  for (int i = 0; i <= 10; ++i) s.rows.push_back(row(0.5 * i, 1.0, 1.0));
  const auto t0 = check_1_2(s, r, 0.0);
  REQUIRE(t0);
  CHECK(*t0 == 0.5);
  const EnvelopeResult env = envelope_neg_p(s, r, 0.0);
  CHECK(env.M1_tilde == 0.0);
  CHECK(env.ok());
  CHECK(envelope_bound(env, r.gamma, 0.0) == doctest::Approx(1.0 + *r.M1));

  DiagnosticsSeries high = s;
  for (auto& x : high.rows) x.neg_p_moment = 1e6;
  CHECK_FALSE(check_1_2(high, r, 0.0));
  const EnvelopeResult bad = envelope_neg_p(high, r, 0.0);
  CHECK_FALSE(bad.ok());
  CHECK_FALSE(bad.tail_ok);
  CHECK_THROWS_AS(check_1_2(s, threshold_report(model::Coefficients::constant(3.0, 1.0, 1.0, 1.0, 1.0), d, 0.5, true),
                            0.0),
                  PreconditionError);
}

TEST_CASE("diagnostics recorder, persistence floor and CSV") {
  const Domain d = Domain::interval(1.0, 16);
  const auto c = model::Coefficients::constant(1.0, 1.0, 1.0, 2.0, 1.0);
  stepper::StepControl ctrl;
  ctrl.fixed_dt = 0.01;
  DiagnosticsRecorder rec(3.0, 0.5, std::nullopt, 7);
  const auto traj = stepper::evolve(ScalarField(d, 2.0), 0.0, 1.0, c, ctrl, {rec.observer()});
  rec.finish();
  const auto& s = rec.series();
  REQUIRE(traj.status == stepper::Status::completed);
  CHECK(s.rows.size() == 16);  // steps 0, 7, ..., 98 and the final step 100
  CHECK(s.rows.back().t == 1.0);
  const PersistenceFloor pf = persistence_floor(s, 0.2);
  CHECK(std::abs(pf.min_u - 2.0) <= 1e-12);
  CHECK(std::abs(pf.min_mass - 2.0) <= 1e-12);
  CHECK(estimate_m2_star({s}, 0.2) == doctest::Approx(1.5 * 8.0).epsilon(1e-12));

  std::ostringstream os;
  s.write_csv(os);
  const std::string csv = os.str();
  CHECK(csv.rfind("t,mass,neg_p_moment,q_moment,min_u,max_u,min_v,holder_seminorm,rectangle_member\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  CHECK(lines == s.rows.size() + 1);

  DiagnosticsSeries copy = s;
  mark_membership(copy, RectangleSpec{2.0 + 1e-12, 0.5 + 1e-12, 8.0 + 1e-9, 3.0});
  for (const auto& r : copy.rows) CHECK(r.rectangle_member);
  mark_membership(copy, RectangleSpec{1.9, 0.5 + 1e-12, 8.0 + 1e-9, 3.0});
  for (const auto& r : copy.rows) CHECK_FALSE(r.rectangle_member);
}
