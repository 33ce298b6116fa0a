#include "smmd/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace smmd {

using nlohmann::json;

std::string estimate_to_json(const std::string& method, const DiscrepancyEstimate& e) {
  json j;
  j["method"] = method;
  j["value"] = e.value;
  j["squared"] = e.squared;
  json d;
  if (e.diag.mmd2) d["mmd2"] = *e.diag.mmd2;
  if (e.diag.sigma) d["sigma"] = *e.diag.sigma;
  if (e.diag.penalty_bar_p) d["penalty_bar_p"] = *e.diag.penalty_bar_p;
  d["solver_iters"] = e.diag.solver_iters;
  if (e.diag.cholesky_rank >= 0) d["cholesky_rank"] = e.diag.cholesky_rank;
  if (e.diag.rank_warning) d["rank_warning"] = true;
  j["diagnostics"] = d;
  return j.dump();
}

namespace {

void check_batches(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw InputError("sample batches differ in dimension");
  if (x.rows() == 0 || y.rows() == 0) throw InputError("empty sample batch");
}

// (K + M lambda I)-style PD solve with escalating jitter, 1e-10 to 1e-6.
Matrix solve_spd(const Matrix& a, const Matrix& rhs, int* attempts_out) {
  const double scale = std::max(1.0, a.trace() / static_cast<double>(a.rows()));
  double jitter = 0.0;
  int attempts = 0;
  for (;;) {
    Matrix aj = a;
    if (jitter > 0.0) aj.diagonal().array() += jitter * scale;
    Eigen::LLT<Matrix> llt(aj);
    if (llt.info() == Eigen::Success) {
      Matrix sol = llt.solve(rhs);
      if (sol.allFinite()) {
        if (attempts_out) *attempts_out = attempts;
        return sol;
      }
    }
    ++attempts;
    jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6)
      throw NumericError("support system solve failed after jitter escalation (jitter " +
                         std::to_string(jitter) + ")");
  }
}

}  // namespace

double mmd2_unbiased(const Kernel& k, const Matrix& x, const Matrix& y) {
  check_batches(x, y);
  const Eigen::Index n = x.rows(), m = y.rows();
  if (n < 2 || m < 2) throw InputError("unbiased estimator needs at least 2 samples per side");
  const Matrix kxx = k.gram(x, x);
  const Matrix kyy = k.gram(y, y);
  const Matrix kxy = k.gram(x, y);
  const double sxx = (kxx.sum() - kxx.trace()) / static_cast<double>(n * (n - 1));
  const double syy = (kyy.sum() - kyy.trace()) / static_cast<double>(m * (m - 1));
  const double sxy = kxy.mean();
  return sxx + syy - 2.0 * sxy;
}

double mmd2_biased(const Kernel& k, const Matrix& x, const Matrix& y) {
  check_batches(x, y);
  return k.gram(x, x).mean() + k.gram(y, y).mean() - 2.0 * k.gram(x, y).mean();
}

double mmd2_block(const Kernel& k, const Matrix& x, const Matrix& y, int n_blocks) {
  check_batches(x, y);
  if (n_blocks < 1) throw InputError("n_blocks must be >= 1");
  const Eigen::Index n = x.rows(), m = y.rows();
  if (n % n_blocks != 0 || m % n_blocks != 0)
    throw InputError("batch sizes must divide evenly into blocks");
  const Eigen::Index bx = n / n_blocks, by = m / n_blocks;
  if (bx < 2 || by < 2) throw InputError("block size must be >= 2");
  double total = 0.0;
  for (int b = 0; b < n_blocks; ++b)
    total += mmd2_unbiased(k, x.middleRows(b * bx, bx), y.middleRows(b * by, by));
  return total / n_blocks;
}

DiscrepancyEstimate smmd(const Kernel& k, const Matrix& x, const Matrix& y,
                         const Matrix& x_mu, double lambda) {
  if (!(lambda > 0.0)) throw InputError("smmd needs lambda > 0");
  check_batches(x, y);
  const auto [mean_kxx, mean_trace] = k.trace_terms(x_mu);
  const double sigma = 1.0 / std::sqrt(lambda + mean_kxx + mean_trace);
  const double m2 = mmd2_biased(k, x, y);
  DiscrepancyEstimate e;
  e.value = sigma * std::sqrt(std::max(0.0, m2));
  e.squared = false;
  e.diag.mmd2 = m2;
  e.diag.sigma = sigma;
  return e;
}

namespace {

// eta_hat(t) and grad eta_hat at the support points.
Vector eta_at_support(const Kernel& k, const Matrix& x, const Matrix& y,
                      const Matrix& support) {
  return k.gram(support, x).rowwise().mean() - k.gram(support, y).rowwise().mean();
}

Vector grad_eta_at_support(const Kernel& k, const Matrix& x, const Matrix& y,
                           const Matrix& support) {
  const Eigen::Index m = support.rows(), d = support.cols();
  Vector out(m * d);
  for (Eigen::Index s = 0; s < m; ++s) {
    const Vector t = support.row(s);
    Vector acc = Vector::Zero(d);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      acc += k.grad_x(t, Vector(x.row(i)));
    acc /= static_cast<double>(x.rows());
    Vector accy = Vector::Zero(d);
    for (Eigen::Index j = 0; j < y.rows(); ++j)
      accy += k.grad_x(t, Vector(y.row(j)));
    accy /= static_cast<double>(y.rows());
    out.segment(s * d, d) = acc - accy;
  }
  return out;
}

}  // namespace

double WitnessVector::eval(const Vector& t) const {
  const Eigen::Index m = support.rows();
  double eta = 0.0;
  for (Eigen::Index i = 0; i < xs.rows(); ++i) eta += kernel.eval(Vector(xs.row(i)), t);
  eta /= static_cast<double>(xs.rows());
  double etay = 0.0;
  for (Eigen::Index j = 0; j < ys.rows(); ++j) etay += kernel.eval(Vector(ys.row(j)), t);
  eta -= etay / static_cast<double>(ys.rows());
  double corr = 0.0;
  for (Eigen::Index s = 0; s < m; ++s) {
    const Vector xm = support.row(s);
    corr += alpha(s) * kernel.eval(xm, t);
    corr += kernel.grad_x(xm, t).dot(beta.segment(s * support.cols(), support.cols()));
  }
  return eta / lambda - corr / (lambda * static_cast<double>(m));
}

Vector WitnessVector::grad(const Vector& t) const {
  const Eigen::Index m = support.rows(), d = support.cols();
  Vector eta = Vector::Zero(d);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) eta += kernel.grad_x(t, Vector(xs.row(i)));
  eta /= static_cast<double>(xs.rows());
  Vector etay = Vector::Zero(d);
  for (Eigen::Index j = 0; j < ys.rows(); ++j) etay += kernel.grad_x(t, Vector(ys.row(j)));
  eta -= etay / static_cast<double>(ys.rows());
  Vector corr = Vector::Zero(d);
  for (Eigen::Index s = 0; s < m; ++s) {
    const Vector xm = support.row(s);
    corr += alpha(s) * kernel.grad_x(t, xm);
    // d/dt of d_i k(X_m, t): row i of grad_xy(X_m, t).
    corr += kernel.grad_xy(xm, t).transpose() * beta.segment(s * d, d);
  }
  return eta / lambda - corr / (lambda * static_cast<double>(m));
}

GcmmdResult gcmmd2(const Kernel& k, const Matrix& x, const Matrix& y,
                   const Matrix& x_mu, double lambda) {
  if (!(lambda > 0.0)) throw InputError("gcmmd needs lambda > 0");
  check_batches(x, y);
  if (x_mu.rows() < 1) throw InputError("gcmmd needs at least one support point");
  if (x_mu.cols() != x.cols()) throw InputError("support batch dimension mismatch");

  const Eigen::Index m = x_mu.rows(), d = x_mu.cols();
  const GramBundle bundle = k.gram_bundle(x_mu);
  Matrix a = bundle.stacked();
  a.diagonal().array() += static_cast<double>(m) * lambda;

  Vector v(m + m * d);
  v.head(m) = eta_at_support(k, x, y, x_mu);
  v.tail(m * d) = grad_eta_at_support(k, x, y, x_mu);

  GcmmdResult out;
  Matrix coeff = solve_spd(a, static_cast<double>(m) * v, &out.jitter_attempts);
  out.penalty_bar_p = v.dot(coeff.col(0)) / static_cast<double>(m);
  out.mmd2 = mmd2_biased(k, x, y);
  out.value2 = (out.mmd2 - out.penalty_bar_p) / lambda;

  out.witness.kernel = k;
  out.witness.support = x_mu;
  out.witness.xs = x;
  out.witness.ys = y;
  out.witness.alpha = coeff.col(0).head(m);
  out.witness.beta = coeff.col(0).tail(m * d);
  out.witness.lambda = lambda;
  return out;
}

GcmmdLowRankResult gcmmd2_lowrank(const Kernel& k, const Matrix& x, const Matrix& y,
                                  const Matrix& x_mu, double lambda,
                                  double chol_tol, int max_rank) {
  if (!(lambda > 0.0)) throw InputError("gcmmd needs lambda > 0");
  check_batches(x, y);
  if (x_mu.rows() < 1) throw InputError("gcmmd needs at least one support point");
  if (max_rank < 0) throw InputError("max_rank must be >= 0");

  const Eigen::Index m = x_mu.rows(), d = x_mu.cols();
  const Eigen::Index n = m + m * d;
  const GramBundle bundle = k.gram_bundle(x_mu);
  const Matrix a0 = bundle.stacked();

  Vector v(n);
  v.head(m) = eta_at_support(k, x, y, x_mu);
  v.tail(m * d) = grad_eta_at_support(k, x, y, x_mu);

  // Pivoted incomplete Cholesky: a0[perm] ~ R' R with R (rank x n).
  Vector diag = a0.diagonal();
  const double trace0 = std::max(diag.sum(), 0.0);
  const double floor = 1e-12 * std::max(1.0, trace0);
  const Eigen::Index cap = std::min<Eigen::Index>(max_rank, n);
  Matrix r(cap, n);
  std::vector<Eigen::Index> pivots;
  double residual = diag.sum();
  while (static_cast<Eigen::Index>(pivots.size()) < cap && residual > chol_tol) {
    Eigen::Index p;
    diag.maxCoeff(&p);
    if (diag(p) <= floor) break;
    const Eigen::Index step = static_cast<Eigen::Index>(pivots.size());
    Vector row = a0.row(p);
    for (Eigen::Index q = 0; q < step; ++q) row -= r(q, p) * r.row(q).transpose();
    row /= std::sqrt(diag(p));
    r.row(step) = row;
    diag -= row.cwiseProduct(row);
    diag = diag.cwiseMax(0.0);
    pivots.push_back(p);
    residual = diag.sum();
  }
  const Eigen::Index rank = static_cast<Eigen::Index>(pivots.size());

  GcmmdLowRankResult out;
  out.rank = static_cast<int>(rank);
  // Warn only when the cap truncated a factorization that had real mass
  // left; residual at the numerical floor is a completed factorization.
  out.rank_warning = (rank == cap && residual > std::max(chol_tol, floor));
  out.mmd2 = mmd2_biased(k, x, y);

  // Project the right-hand side onto the span of the factor: q solves the
  // lower-triangular system over pivot columns, so that v ~ R' q. With an
  // empty factor the projection (and the penalty) are exactly zero.
  Vector q(rank);
  for (Eigen::Index j = 0; j < rank; ++j) {
    double s = v(pivots[j]);
    for (Eigen::Index i = 0; i < j; ++i) s -= r(i, pivots[j]) * q(i);
    q(j) = s / r(j, pivots[j]);
  }
  double bar_p = 0.0;
  if (rank > 0) {
    const Matrix rr = r.topRows(rank);
    const Vector vt = rr.transpose() * q;  // projected rhs
    const Vector rv = rr * vt;
    Matrix small = rr * rr.transpose();
    small.diagonal().array() += static_cast<double>(m) * lambda;
    const Vector sol = solve_spd(small, rv, nullptr);
    bar_p = (vt.squaredNorm() - rv.dot(sol)) / (static_cast<double>(m) * lambda);
  }
  out.penalty_bar_p = bar_p;
  out.value2 = (out.mmd2 - bar_p) / lambda;
  return out;
}

FamilySweep optimize_over_family(const std::function<double(double)>& estimate,
                                 const std::vector<double>& grid) {
  if (grid.empty()) throw InputError("parameter grid is empty");
  FamilySweep best;
  bool first = true;
  for (double psi : grid) {
    const double val = estimate(psi);
    if (first || val > best.sup || (val == best.sup && psi < best.arg)) {
      best.sup = val;
      best.arg = psi;
      first = false;
    }
  }
  return best;
}

double wasserstein1d_exact(Vector x, Vector y) {
  if (x.size() != y.size()) throw InputError("wasserstein1d needs equal sizes");
  if (x.size() == 0) throw InputError("wasserstein1d needs nonempty samples");
  std::sort(x.data(), x.data() + x.size());
  std::sort(y.data(), y.data() + y.size());
  return (x - y).cwiseAbs().mean();
}

double dirac_mmd2(double psi, double theta) {
  return 2.0 * (1.0 - std::exp(-0.5 * psi * psi * theta * theta));
}

double dirac_smmd2(double psi, double theta, double lambda) {
  return dirac_mmd2(psi, theta) / (lambda + 1.0 + psi * psi);
}

}  // namespace smmd
