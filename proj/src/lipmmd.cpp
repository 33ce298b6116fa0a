#include <Eigen/Dense>
#include <cmath>

#include "smmd/estimators.hpp"
#include "smmd/qcqp.hpp"

namespace smmd {

namespace {

Matrix vstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

Matrix lipmmd_default_grid(const Matrix& x, const Matrix& y, int points_per_dim) {
  if (x.cols() != y.cols()) throw InputError("batches differ in dimension");
  const Eigen::Index d = x.cols();
  if (d > 2) throw InputError("default grid covers 1 or 2 dimensions only");
  if (points_per_dim <= 0) points_per_dim = (d == 1) ? 64 : 16;
  Vector lo(d), hi(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    lo(j) = std::min(x.col(j).minCoeff(), y.col(j).minCoeff());
    hi(j) = std::max(x.col(j).maxCoeff(), y.col(j).maxCoeff());
    const double range = std::max(hi(j) - lo(j), 1e-6);
    lo(j) -= 0.1 * range;
    hi(j) += 0.1 * range;
  }
  if (d == 1) {
    Matrix z(points_per_dim, 1);
    for (int i = 0; i < points_per_dim; ++i)
      z(i, 0) = lo(0) + (hi(0) - lo(0)) * i / (points_per_dim - 1.0);
    return z;
  }
  Matrix z(points_per_dim * points_per_dim, 2);
  for (int i = 0; i < points_per_dim; ++i)
    for (int j = 0; j < points_per_dim; ++j) {
      z(i * points_per_dim + j, 0) = lo(0) + (hi(0) - lo(0)) * i / (points_per_dim - 1.0);
      z(i * points_per_dim + j, 1) = lo(1) + (hi(1) - lo(1)) * j / (points_per_dim - 1.0);
    }
  return z;
}

LipmmdResult lipmmd(const Kernel& k, const Matrix& x, const Matrix& y,
                    const Matrix& z, double lambda, LipmmdState* state) {
  if (!(lambda > 0.0)) throw InputError("lipmmd needs lambda > 0");
  if (x.cols() != y.cols() || x.cols() != z.cols())
    throw InputError("lipmmd batches differ in dimension");
  if (x.rows() == 0 || y.rows() == 0) throw InputError("empty sample batch");
  if (z.rows() < 1) throw InputError("lipmmd needs at least one grid point");

  const Eigen::Index nx = x.rows(), ny = y.rows(), nz = z.rows(), d = x.cols();
  const Matrix data = vstack(x, y);
  const Eigen::Index np = nx + ny;

  Matrix kdata = k.gram(data, data);
  kdata = ((kdata + kdata.transpose()) / 2.0).eval();

  Matrix b(nz * d, np);
  for (Eigen::Index j = 0; j < nz; ++j) {
    const Vector zj = z.row(j);
    for (Eigen::Index a = 0; a < np; ++a)
      b.block(j * d, a, d, 1) = k.grad_x(zj, Vector(data.row(a)));
  }

  Matrix h(nz * d, nz * d);
  for (Eigen::Index j = 0; j < nz; ++j)
    for (Eigen::Index j2 = 0; j2 < nz; ++j2)
      h.block(j * d, j2 * d, d, d) = k.grad_xy(Vector(z.row(j)), Vector(z.row(j2)));
  h = ((h + h.transpose()) / 2.0).eval();

  Vector weights(np);
  weights.head(nx).setConstant(1.0 / static_cast<double>(nx));
  weights.tail(ny).setConstant(-1.0 / static_cast<double>(ny));

  // Objective <eta_hat, f> expressed on the representer basis.
  const Eigen::Index dim = np + nz * d;
  Vector c(dim);
  c.head(np) = kdata * weights;
  c.tail(nz * d) = b * weights;

  Matrix kfull(dim, dim);
  kfull.topLeftCorner(np, np) = kdata;
  kfull.topRightCorner(np, nz * d) = b.transpose();
  kfull.bottomLeftCorner(nz * d, np) = b;
  kfull.bottomRightCorner(nz * d, nz * d) = h;
  kfull = ((kfull + kfull.transpose()) / 2.0).eval();
  {
    // Clip rounding-level negative eigenvalues; large lambda would otherwise
    // amplify them into indefinite constraint forms.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(kfull);
    if (eig.eigenvalues().minCoeff() < 0.0)
      kfull = eig.eigenvectors() *
              eig.eigenvalues().cwiseMax(0.0).asDiagonal() *
              eig.eigenvectors().transpose();
  }

  const double kscale = std::max(1.0, kfull.trace() / static_cast<double>(dim));

  QcqpSolution sol;
  // eta_hat = 0 (e.g. identical batches) makes every coefficient direction
  // in null(Kfull) objective-free only in exact arithmetic; cut it off here.
  if (c.lpNorm<Eigen::Infinity>() <= 1e-13 * kscale) {
    sol.x = Vector::Zero(dim);
    sol.duals = Vector::Zero(nz);
    c.setZero();
  } else {
    Qcqp problem;
    problem.c = c;
    problem.constraints.reserve(nz);
    Matrix sj(d, dim);
    for (Eigen::Index j = 0; j < nz; ++j) {
      sj.leftCols(np) = b.middleRows(j * d, d);
      sj.rightCols(nz * d) = h.middleRows(j * d, d);
      Matrix pj = sj.transpose() * sj + lambda * kfull;
      // Duplicated basis functions leave exact null directions; a ridge far
      // below all tolerances keeps the coefficient problem bounded.
      pj.diagonal().array() +=
          1e-12 * std::max(kscale, pj.trace() / static_cast<double>(dim));
      problem.constraints.push_back(((pj + pj.transpose()) / 2.0).eval());
    }
    sol = solve_qcqp(problem);
  }

  LipmmdResult out;
  out.value = c.dot(sol.x);
  out.duals = sol.duals;
  if (state) {
    state->kdata = kdata;
    state->b = b;
    state->h = h;
    state->weights = weights;
    state->delta = sol.x;
    state->duals = sol.duals;
    state->lambda = lambda;
    state->value = out.value;
    state->nx = static_cast<int>(nx);
    state->ny = static_cast<int>(ny);
    state->nz = static_cast<int>(nz);
    state->dim = static_cast<int>(d);
    state->solver_iters = sol.newton_iters;
  }
  return out;
}

double lipmmd_grad(const LipmmdState& st, const Matrix& dk, const Matrix& db,
                   const Matrix& dh, double dual_tol) {
  const Eigen::Index np = st.nx + st.ny;
  const Eigen::Index zd = static_cast<Eigen::Index>(st.nz) * st.dim;
  if (dk.rows() != np || dk.cols() != np || db.rows() != zd || db.cols() != np ||
      dh.rows() != zd || dh.cols() != zd)
    throw InputError("lipmmd_grad differential shape mismatch");

  // Strict complementarity: an active constraint with a vanishing dual makes
  // the KKT differential ill-posed.
  for (Eigen::Index j = 0; j < st.nz; ++j) {
    Matrix sj(st.dim, np + zd);
    sj.leftCols(np) = st.b.middleRows(j * st.dim, st.dim);
    sj.rightCols(zd) = st.h.middleRows(j * st.dim, st.dim);
    double quad = (sj * st.delta).squaredNorm();
    quad += st.lambda * (st.delta.head(np).dot(st.kdata * st.delta.head(np)) +
                         2.0 * st.delta.tail(zd).dot(st.b * st.delta.head(np)) +
                         st.delta.tail(zd).dot(st.h * st.delta.tail(zd)));
    if (quad > 1.0 - 1e-6 && st.duals(j) <= dual_tol)
      throw NumericError("lipmmd_grad: degenerate duals (active constraint with zero multiplier)");
  }

  // Envelope term: d(c' delta) with c = [K; B] weights.
  double total = st.delta.head(np).dot(dk * st.weights) +
                 st.delta.tail(zd).dot(db * st.weights);

  // Constraint term: - sum_j mu_j delta' dP_j delta with
  // dP_j = dS_j' S_j + S_j' dS_j + lambda dKfullFull.
  const Vector da = st.delta.head(np);
  const Vector dg = st.delta.tail(zd);
  const double quad_kfull = da.dot(dk * da) + 2.0 * dg.dot(db * da) + dg.dot(dh * dg);
  for (Eigen::Index j = 0; j < st.nz; ++j) {
    if (st.duals(j) == 0.0) continue;
    Matrix sj(st.dim, np + zd);
    sj.leftCols(np) = st.b.middleRows(j * st.dim, st.dim);
    sj.rightCols(zd) = st.h.middleRows(j * st.dim, st.dim);
    Matrix dsj(st.dim, np + zd);
    dsj.leftCols(np) = db.middleRows(j * st.dim, st.dim);
    dsj.rightCols(zd) = dh.middleRows(j * st.dim, st.dim);
    const double dquad = 2.0 * (sj * st.delta).dot(dsj * st.delta) + st.lambda * quad_kfull;
    total -= st.duals(j) * dquad;
  }
  return total;
}

}  // namespace smmd
