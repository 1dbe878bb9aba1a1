#include "chemolab/elliptic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace chemo::elliptic {

namespace {

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

HelmholtzOperator::HelmholtzOperator(const Domain& domain, double shift, double scale)
    : domain_(domain), shift_(shift), coupling_(scale / (domain.h() * domain.h())) {
  if (!(shift > 0.0) || !std::isfinite(shift)) throw PreconditionError("Helmholtz shift must be > 0");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw PreconditionError("Helmholtz scale must be >= 0");
  if (domain_.dim() == 1) {
    const std::size_t n = domain_.size();
    pivots_.resize(n);
    lower_.assign(n, 0.0);
    pivots_[0] = diagonal(0);
    for (std::size_t i = 1; i < n; ++i) {
      lower_[i] = -coupling_ / pivots_[i - 1];
      pivots_[i] = diagonal(i) + lower_[i] * coupling_;
    }
  }
}

double HelmholtzOperator::diagonal(std::size_t i) const {
  const int nx = domain_.nx();
  const int ny = domain_.ny();
  const int ix = static_cast<int>(i % nx);
  const int iy = static_cast<int>(i / nx);
  int neighbours = (ix > 0) + (ix < nx - 1);
  if (domain_.dim() == 2) neighbours += (iy > 0) + (iy < ny - 1);
  return shift_ + coupling_ * neighbours;
}

void HelmholtzOperator::apply(std::span<const double> x, std::span<double> y) const {
  const int nx = domain_.nx();
  const int ny = domain_.ny();
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const std::size_t k = domain_.index(i, j);
      const double xi = x[k];
      double flux = 0.0;
      if (i > 0) flux += xi - x[k - 1];
      if (i < nx - 1) flux += xi - x[k + 1];
      if (domain_.dim() == 2) {
        if (j > 0) flux += xi - x[k - nx];
        if (j < ny - 1) flux += xi - x[k + nx];
      }
      y[k] = shift_ * xi + coupling_ * flux;
    }
  }
}

std::vector<double> HelmholtzOperator::row_sums() const {
  std::vector<double> ones(domain_.size(), 1.0), out(domain_.size());
  apply(ones, out);
  return out;
}

std::vector<Entry> HelmholtzOperator::entries() const {
  const int nx = domain_.nx();
  const int ny = domain_.ny();
  std::vector<Entry> out;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const std::size_t k = domain_.index(i, j);
      if (domain_.dim() == 2 && j > 0) out.push_back({k, k - nx, -coupling_});
      if (i > 0) out.push_back({k, k - 1, -coupling_});
      out.push_back({k, k, diagonal(k)});
      if (i < nx - 1) out.push_back({k, k + 1, -coupling_});
      if (domain_.dim() == 2 && j < ny - 1) out.push_back({k, k + nx, -coupling_});
    }
  }
  return out;
}

double HelmholtzOperator::residual_norm(std::span<const double> rhs, std::span<const double> x) const {
  std::vector<double> ax(x.size());
  apply(x, ax);
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(ax[i] - rhs[i]));
  return m;
}

double HelmholtzOperator::attainable_tolerance() const noexcept {
  const double max_diag = shift_ + 2.0 * domain_.dim() * coupling_;
  return 16.0 * std::numeric_limits<double>::epsilon() * max_diag / shift_;
}

SolveStats HelmholtzOperator::solve(std::span<const double> rhs, std::span<double> x, double tol) const {
  if (rhs.size() != domain_.size() || x.size() != domain_.size())
    throw PreconditionError("HelmholtzOperator::solve: size mismatch");
  if (!(tol > 0.0)) throw PreconditionError("HelmholtzOperator::solve: tol must be > 0");
  return domain_.dim() == 1 ? solve_tridiagonal(rhs, x, tol) : solve_pcg(rhs, x, tol);
}

SolveStats HelmholtzOperator::solve_tridiagonal(std::span<const double> rhs, std::span<double> x,
                                                double tol) const {
  const std::size_t n = rhs.size();
  const double target = tol * std::max(1.0, max_abs(rhs));
  std::vector<double> r(rhs.begin(), rhs.end());
  std::vector<double> dx(n), ax(n);
  std::fill(x.begin(), x.end(), 0.0);
  double res = std::numeric_limits<double>::infinity();
  // One direct solve followed by up to two refinement sweeps.
  for (int pass = 0; pass < 3; ++pass) {
    dx[0] = r[0];
    for (std::size_t i = 1; i < n; ++i) dx[i] = r[i] - lower_[i] * dx[i - 1];
    for (std::size_t i = 0; i < n; ++i) dx[i] /= pivots_[i];
    for (std::size_t i = n - 1; i-- > 0;) dx[i] -= lower_[i + 1] * dx[i + 1];
    for (std::size_t i = 0; i < n; ++i) x[i] += dx[i];
    apply(x, ax);
    res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rhs[i] - ax[i];
      res = std::max(res, std::abs(r[i]));
    }
    if (res <= target) return {res, pass + 1};
  }
  throw SolverError("tridiagonal solve missed its residual target", res, 3);
}

SolveStats HelmholtzOperator::solve_pcg(std::span<const double> rhs, std::span<double> x, double tol) const {
  const std::size_t n = rhs.size();
  const double target = tol * std::max(1.0, max_abs(rhs));
  const int cap = static_cast<int>(10 * n);
  std::vector<double> inv_diag(n), r(n), z(n), p(n), q(n);
  for (std::size_t i = 0; i < n; ++i) inv_diag[i] = 1.0 / diagonal(i);

  auto true_residual = [&]() {
    apply(x, q);
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rhs[i] - q[i];
      m = std::max(m, std::abs(r[i]));
    }
    return m;
  };

  double res = true_residual();
  int it = 0;
  while (res > target && it < cap) {
    // (Re)start from the true residual.
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = dot(r, z);
    while (it < cap) {
      ++it;
      apply(p, q);
      const double pq = dot(p, q);
      if (!(pq > 0.0)) break;
      const double alpha = rz / pq;
      double rmax = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * q[i];
        rmax = std::max(rmax, std::abs(r[i]));
      }
      if (rmax <= 0.5 * target) break;
      for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    const double prev = res;
    res = true_residual();
    if (res > target && res >= prev && it >= cap) break;
  }
  if (res > target) throw SolverError("conjugate gradients missed the residual target", res, it);
  return {res, it};
}

EllipticOperator::EllipticOperator(const Domain& domain, double mu) : mu_(mu), op_(domain, mu, 1.0) {}

EllipticOperator assemble(const Domain& domain, double mu) {
  if (!(mu > 0.0)) throw PreconditionError("assemble: mu must be > 0");
  return EllipticOperator(domain, mu);
}

ScalarField solve_v(const EllipticOperator& op, const ScalarField& u, double nu, double tol,
                    const ScalarField* guess) {
  if (!(u.domain() == op.domain())) throw PreconditionError("solve_v: domain mismatch");
  if (!(tol > 0.0)) throw PreconditionError("solve_v: tol must be > 0");
  std::vector<double> rhs(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) rhs[i] = nu * u[i];
  std::vector<double> v(u.size(), 0.0);
  if (guess != nullptr) std::copy(guess->values().begin(), guess->values().end(), v.begin());
  op.matrix().solve(rhs, v, tol);
  return ScalarField(u.domain(), std::move(v));
}

Delta0Result delta0_h(const Domain& domain, double mu, double nu, const Delta0Options& opts) {
  const EllipticOperator op = assemble(domain, mu);
  const std::size_t n = domain.size();
  const double tol = std::max(opts.tol, op.matrix().attainable_tolerance());

  std::vector<std::size_t> columns;
  const bool certified = n <= opts.max_columns;
  if (certified) {
    columns.resize(n);
    for (std::size_t i = 0; i < n; ++i) columns[i] = i;
  } else {
    const int nx = domain.nx(), ny = domain.ny();
    columns = {domain.index(0, 0), domain.index(nx - 1, 0), domain.index(0, ny - 1),
               domain.index(nx - 1, ny - 1)};
    const std::size_t stride = std::max<std::size_t>(1, n / opts.max_columns);
    for (std::size_t i = 0; i < n && columns.size() < opts.max_columns; i += stride) columns.push_back(i);
    std::sort(columns.begin(), columns.end());
    columns.erase(std::unique(columns.begin(), columns.end()), columns.end());
  }

  struct Best {
    double value = std::numeric_limits<double>::infinity();
    std::size_t src = 0, eval = 0;
  };
  auto better = [](const Best& a, const Best& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.src != b.src) return a.src < b.src;
    return a.eval < b.eval;
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(columns.size())));
  std::vector<Best> partial(threads);
  auto worker = [&](unsigned tid) {
    std::vector<double> rhs(n, 0.0), g(n, 0.0);
    Best best;
    for (std::size_t c = tid; c < columns.size(); c += threads) {
      const std::size_t y = columns[c];
      std::fill(rhs.begin(), rhs.end(), 0.0);
      rhs[y] = nu / domain.weight();
      std::fill(g.begin(), g.end(), 0.0);
      op.matrix().solve(rhs, g, tol);
      for (std::size_t x = 0; x < n; ++x) {
        const Best cand{g[x], y, x};
        if (better(cand, best)) best = cand;
      }
    }
    partial[tid] = best;
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  }
  Best best;
  for (const auto& b : partial)
    if (better(b, best)) best = b;
  return {best.value, certified, columns.size(), best.src, best.eval};
}

}  // namespace chemo::elliptic
