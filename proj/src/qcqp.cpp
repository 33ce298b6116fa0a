#include "smmd/qcqp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <vector>

namespace smmd {

namespace {


// 1 - x' P x. The plain double dot loses ~1e-15 absolutely, which is fatal
// for the path duals 1/(t s) once s is small; tiny slacks are recomputed
// with long-double accumulation.
double slack_of(const Matrix& pj, const Vector& x, const Vector& pjx) {
  const double fast = 1.0 - x.dot(pjx);
  if (fast > 1e-5) return fast;
  long double q = 0.0L;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    long double inner = 0.0L;
    for (Eigen::Index j = 0; j < x.size(); ++j)
      inner += static_cast<long double>(pj(i, j)) * static_cast<long double>(x(j));
    q += static_cast<long double>(x(i)) * inner;
  }
  return static_cast<double>(1.0L - q);
}

bool debug_enabled() {
  static const bool on = std::getenv("SMMD_QCQP_DEBUG") != nullptr;
  return on;
}

// Newton refinement of the KKT equations on a fixed active set, dropping
// constraints whose multipliers come out negative. Densely packed grids can
// leave the system rank-deficient (near-parallel constraint gradients), so
// steps are taken in the minimum-norm sense. Returns true when the residual
// reaches machine precision with nonnegative duals and every inactive
// constraint feasible.
bool polish_active_set(const Qcqp& p, std::vector<int> active, Vector& x,
                       Vector& duals, double jitter) {
  const Eigen::Index n = x.size();
  for (int attempt = 0; attempt < 24; ++attempt) {
    if (active.empty()) return false;
    const Eigen::Index na = static_cast<Eigen::Index>(active.size());
    Vector z(n + na);
    z.head(n) = x;
    {
      // Least-squares dual warm start on the current set.
      Matrix a(n, na);
      for (Eigen::Index i = 0; i < na; ++i)
        a.col(i) = 2.0 * (p.constraints[active[i]] * x);
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
      const Vector mu = cod.solve(p.c);
      for (Eigen::Index i = 0; i < na; ++i) z(n + i) = std::max(mu(i), 1e-10);
    }

    const double scale = std::max(1.0, p.c.norm());
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
      Vector xx = z.head(n);
      Vector f(n + na);
      Matrix jac = Matrix::Zero(n + na, n + na);
      Vector stat = p.c;
      for (Eigen::Index a = 0; a < na; ++a) {
        const Matrix& pj = p.constraints[active[a]];
        const Vector pjx = pj * xx;
        stat -= 2.0 * z(n + a) * pjx;
        jac.topLeftCorner(n, n) -= 2.0 * z(n + a) * pj;
        jac.block(0, n + a, n, 1) = -2.0 * pjx;
        jac.block(n + a, 0, 1, n) = -2.0 * pjx.transpose();
        f(n + a) = 1.0 - xx.dot(pjx);
      }
      f.head(n) = stat;
      if (f.lpNorm<Eigen::Infinity>() <= 1e-13 * scale) {
        converged = true;
        break;
      }
      jac.diagonal().head(n).array() -= jitter;
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(jac);
      Vector step = cod.solve(-f);
      if (!step.allFinite()) break;
      const double cap = 10.0 * std::max(1.0, z.norm());
      if (step.norm() > cap) step *= cap / step.norm();
      z += step;
    }
    if (!converged) {
      if (debug_enabled())
        std::fprintf(stderr, "[polish] attempt %d: no convergence with %zu active\n",
                     attempt, active.size());
      return false;
    }

    // Drop constraints with negative multipliers.
    std::vector<int> keep;
    for (Eigen::Index a = 0; a < na; ++a)
      if (z(n + a) >= -1e-10) keep.push_back(active[a]);
    if (keep.size() != active.size()) {
      x = z.head(n);
      active = std::move(keep);
      continue;
    }

    // Add any inactive constraint the refined point violates.
    Vector xx = z.head(n);
    bool added = false;
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
      const double s = xx.dot(p.constraints[j] * xx);
      if (s > 1.0 + 1e-12 &&
          std::find(active.begin(), active.end(), static_cast<int>(j)) == active.end()) {
        active.push_back(static_cast<int>(j));
        added = true;
      }
    }
    if (added) {
      if (debug_enabled())
        std::fprintf(stderr, "[polish] attempt %d: grew active set to %zu\n", attempt,
                     active.size());
      continue;
    }
    x = xx;
    duals.setZero();
    for (Eigen::Index a = 0; a < na; ++a)
      duals(active[a]) = std::max(0.0, z(n + a));
    return true;
  }
  return false;
}

// Nonnegative least-squares refit of the duals at a fixed primal point:
// minimizes the stationarity residual over candidate active sets of
// increasing slack, dropping negative multipliers. Keeps whichever duals
// give the smallest overall KKT residual.
void refit_duals(const Qcqp& p, QcqpSolution& sol, double& best_resid) {
  const Eigen::Index m = static_cast<Eigen::Index>(p.constraints.size());
  std::vector<double> slack(m);
  std::vector<Vector> grads(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    grads[j] = 2.0 * (p.constraints[j] * sol.x);
    slack[j] = 1.0 - 0.5 * sol.x.dot(grads[j]);
  }
  for (double cap : {1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    std::vector<int> cand;
    for (Eigen::Index j = 0; j < m; ++j)
      if (slack[j] <= cap) cand.push_back(static_cast<int>(j));
    if (cand.empty()) continue;
    for (int pass = 0; pass < 8 && !cand.empty(); ++pass) {
      Matrix a(sol.x.size(), cand.size());
      for (std::size_t i = 0; i < cand.size(); ++i) a.col(i) = grads[cand[i]];
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
      Vector mu = cod.solve(p.c);
      std::vector<int> keep;
      for (std::size_t i = 0; i < cand.size(); ++i)
        if (mu(i) >= 0.0) keep.push_back(cand[i]);
      if (keep.size() == cand.size()) {
        QcqpSolution trial = sol;
        trial.duals.setZero();
        for (std::size_t i = 0; i < cand.size(); ++i) trial.duals(cand[i]) = mu(i);
        const double r = qcqp_kkt_residual(p, trial);
        if (r < best_resid) {
          best_resid = r;
          sol = trial;
        }
        break;
      }
      cand = std::move(keep);
    }
  }
}

}  // namespace

double qcqp_kkt_residual(const Qcqp& p, const QcqpSolution& sol) {
  const double cn = std::max(1.0, p.c.norm());
  Vector stat = p.c;
  double worst = 0.0;
  for (std::size_t j = 0; j < p.constraints.size(); ++j) {
    const Vector pjx = p.constraints[j] * sol.x;
    const double s = sol.x.dot(pjx);
    stat -= 2.0 * sol.duals(j) * pjx;
    worst = std::max(worst, std::abs(sol.duals(j) * (s - 1.0)));  // compl. slack
    worst = std::max(worst, s - 1.0);                             // feasibility
    worst = std::max(worst, -sol.duals(j));                       // dual sign
  }
  worst = std::max(worst, stat.norm() / cn);
  return worst;
}

QcqpSolution solve_qcqp(const Qcqp& p, const QcqpOptions& opts) {
  const Eigen::Index n = p.c.size();
  if (n == 0) throw InputError("qcqp objective is empty");
  if (p.constraints.empty()) throw InputError("qcqp needs at least one constraint");
  for (const Matrix& pj : p.constraints) {
    if (pj.rows() != n || pj.cols() != n)
      throw InputError("qcqp constraint dimension mismatch");
    if ((pj - pj.transpose()).lpNorm<Eigen::Infinity>() >
        1e-10 * std::max(1.0, pj.lpNorm<Eigen::Infinity>()))
      throw InputError("qcqp constraint matrix is not symmetric");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(p.constraints.size());

  QcqpSolution sol;
  sol.x = Vector::Zero(n);
  sol.duals = Vector::Zero(m);
  if (p.c.norm() == 0.0) return sol;  // x = 0 optimal, all constraints slack

  Vector x = Vector::Zero(n);
  double t = 1.0;
  const double gap_target = std::min(opts.tol, 1e-9);
  const double cnorm = std::max(1e-12, p.c.norm());
  int total_newton = 0;
  int degrading = 0;
  double best_resid = std::numeric_limits<double>::infinity();

  for (;;) {
    ++sol.barrier_stages;
    bool stalled = false;
    int no_progress = 0;
    // Work with the t-scaled objective -c'x - (1/t) sum log s: its gradient
    // is the KKT stationarity vector for the path duals 1/(t s), with O(1)
    // magnitudes at every t.
    auto scaled_grad_at = [&](const Vector& v, bool* feas) {
      Vector g = -p.c;
      for (const Matrix& pj : p.constraints) {
        const Vector pjv = pj * v;
        const double s = slack_of(pj, v, pjv);
        if (s <= 0.0) {
          if (feas) *feas = false;
          return g;
        }
        g += (2.0 / (t * s)) * pjv;
      }
      if (feas) *feas = true;
      return g;
    };
    for (int it = 0; it < 80; ++it) {
      if (total_newton++ > opts.max_newton)
        throw NumericError("qcqp: Newton iteration limit exceeded");
      Vector grad = -p.c;
      Matrix hess = Matrix::Zero(n, n);
      bool ok = true;
      for (const Matrix& pj : p.constraints) {
        const Vector pjx = pj * x;
        const double s = slack_of(pj, x, pjx);
        if (s <= 0.0) { ok = false; break; }
        grad += (2.0 / (t * s)) * pjx;
        hess += (2.0 / (t * s)) * pj +
                (4.0 / (t * s * s)) * (pjx * pjx.transpose());
      }
      if (!ok) throw NumericError("qcqp: iterate left the feasible region");
      const double gnorm = grad.norm();
      if (gnorm <= 0.1 * std::min(opts.tol, 1e-8) * cnorm) break;

      // Spectral solve of the Newton system: near the boundary the Hessian
      // mixes curvature scales across many orders of magnitude and a plain
      // Cholesky step loses the small-curvature directions; truncating the
      // spectrum keeps the direction usable.
      Eigen::SelfAdjointEigenSolver<Matrix> eig(hess);
      if (eig.info() != Eigen::Success)
        throw NumericError("qcqp: Hessian eigendecomposition failed");
      const double lam_max = eig.eigenvalues().maxCoeff();
      if (!(lam_max > 0.0)) break;
      const double lam_floor = std::max(lam_max * 1e-14, opts.jitter);
      Vector gproj = eig.eigenvectors().transpose() * grad;
      for (Eigen::Index i = 0; i < gproj.size(); ++i)
        gproj(i) /= std::max(eig.eigenvalues()(i), lam_floor);
      const Vector dx = -(eig.eigenvectors() * gproj);
      const double dec2 = -grad.dot(dx);
      if (dec2 <= 0.0) break;
      // Newton decrement of the unscaled barrier (affine-invariant measure).
      const double lambda_n = std::sqrt(t * dec2);

      // Damped Newton: backtrack on feasibility, then accept under a
      // watchdog gradient merit (no objective differencing).
      double alpha = lambda_n > 0.25 ? 1.0 / (1.0 + lambda_n) : 1.0;
      Vector cand;
      bool feasible = false;
      for (int ls = 0; ls < 60; ++ls) {
        cand = x + alpha * dx;
        feasible = true;
        for (const Matrix& pj : p.constraints)
          if (1.0 - cand.dot(pj * cand) <= 0.0) { feasible = false; break; }
        if (feasible) break;
        alpha *= 0.5;
      }
      if (!feasible || alpha < 1e-13) {
        if (debug_enabled())
          std::fprintf(stderr, "[qcqp]   stall: feasibility (it=%d alpha=%.2e lambda=%.2e)\n",
                       it, alpha, lambda_n);
        stalled = true;
        break;
      }
      if (lambda_n <= 0.25) {
        auto merit = [&](const Vector& v) {
          bool feas = true;
          const Vector g = scaled_grad_at(v, &feas);
          return feas ? g.norm() : std::numeric_limits<double>::infinity();
        };
        double m_cand = merit(cand);
        int shrink = 0;
        while (m_cand > 1.5 * gnorm && shrink++ < 20) {
          alpha *= 0.5;
          cand = x + alpha * dx;
          m_cand = merit(cand);
        }
        if (m_cand > 1.5 * gnorm) {
          if (debug_enabled())
            std::fprintf(stderr,
                         "[qcqp]   stall: merit %.3e vs %.3e (it=%d lambda=%.2e)\n",
                         m_cand, gnorm, it, lambda_n);
          stalled = true;
          break;
        }
        if (m_cand >= gnorm) {
          if (++no_progress >= 8) {
            if (debug_enabled())
              std::fprintf(stderr, "[qcqp]   stall: no merit progress (it=%d)\n", it);
            stalled = true;
            break;
          }
        } else {
          no_progress = 0;
        }
      }
      x = cand;
      if (x.norm() > 1e10) throw NumericError("qcqp: problem appears unbounded");
    }

    Vector duals(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector pjx = p.constraints[j] * x;
      duals(j) = 1.0 / (t * slack_of(p.constraints[j], x, pjx));
    }
    QcqpSolution stage_sol = sol;
    stage_sol.x = x;
    stage_sol.duals = duals;
    stage_sol.newton_iters = total_newton;
    const double resid = qcqp_kkt_residual(p, stage_sol);
    if (resid < best_resid) {
      best_resid = resid;
      sol = stage_sol;
    }
    if (t >= 1e6 && resid > opts.tol) {
      // The path duals 1/(t s) are only as stationary as the last Newton
      // point; a least-squares dual refit at the same x often does better.
      QcqpSolution refit = stage_sol;
      double refit_resid = resid;
      refit_duals(p, refit, refit_resid);
      if (refit_resid < best_resid) {
        best_resid = refit_resid;
        sol = refit;
      }
    }
    if (debug_enabled())
      std::fprintf(stderr,
                   "[qcqp] stage %d t=%.1e newton=%d stalled=%d obj=%.9e resid=%.3e\n",
                   sol.barrier_stages, t, total_newton, (int)stalled, p.c.dot(x),
                   resid);

    // Exact active-set refinement; quadratic from a centered warm start.
    if (t >= 1e4) {
      std::vector<int> active;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double s = 1.0 - x.dot(p.constraints[j] * x);
        if (s < 1e-2) active.push_back(static_cast<int>(j));
      }
      Vector px = x;
      Vector pduals = duals;
      if (polish_active_set(p, active, px, pduals, opts.jitter)) {
        QcqpSolution polished = stage_sol;
        polished.x = px;
        polished.duals = pduals;
        polished.polished = true;
        const double presid = qcqp_kkt_residual(p, polished);
        if (debug_enabled())
          std::fprintf(stderr, "[qcqp]   polish: active=%zu resid=%.3e\n",
                       active.size(), presid);
        if (presid <= opts.tol) return polished;
        if (presid < best_resid) {
          best_resid = presid;
          sol = polished;
        }
      }
    }
    if (best_resid <= opts.tol) break;
    // Residuals eventually degrade with t; stop only on a sustained trend so
    // that a single badly centered stage cannot end the path early.
    if (resid > 30.0 * best_resid) {
      if (++degrading >= 2) break;
    } else {
      degrading = 0;
    }
    if (static_cast<double>(m) / t <= gap_target * 0.1) break;
    // Take half-decade steps near the end: the re-centering shock shrinks
    // and every stage is a fresh chance for the dual refit.
    t *= (t >= 1e4) ? 3.1622776601683795 : 10.0;
    if (t > 1e16) break;
  }

  if (best_resid > opts.tol) refit_duals(p, sol, best_resid);
  if (debug_enabled())
    std::fprintf(stderr, "[qcqp] final resid=%.3e\n", best_resid);
  if (best_resid > std::max(opts.tol, 1e-8)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", best_resid);
    throw NumericError(std::string("qcqp: KKT residual ") + buf +
                       " above tolerance after barrier path");
  }
  return sol;
}

}  // namespace smmd
