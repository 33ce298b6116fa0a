#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smmd/kernel.hpp"
#include "smmd/types.hpp"

namespace smmd {

struct Diagnostics {
  std::optional<double> mmd2;
  std::optional<double> sigma;
  std::optional<double> penalty_bar_p;
  int solver_iters = 0;
  int cholesky_rank = -1;
  bool rank_warning = false;
};

struct DiscrepancyEstimate {
  double value = 0.0;
  bool squared = false;
  Diagnostics diag;
};

std::string estimate_to_json(const std::string& method, const DiscrepancyEstimate& e);

// ---- plain MMD^2 ----------------------------------------------------------

// U-statistic (off-diagonal means); may be negative. Requires n, m >= 2.
double mmd2_unbiased(const Kernel& k, const Matrix& x, const Matrix& y);
// V-statistic ||eta_hat||^2; always >= 0.
double mmd2_biased(const Kernel& k, const Matrix& x, const Matrix& y);
// Mean of per-block unbiased estimates over contiguous equal splits.
double mmd2_block(const Kernel& k, const Matrix& x, const Matrix& y, int n_blocks);

// ---- scaled MMD ------------------------------------------------------------

// sigma = 1/sqrt(lambda + mean k(x,x) + mean tr grad_xy(x,x)) over x_mu;
// value = sigma * sqrt(max(mmd2_biased, 0)).
DiscrepancyEstimate smmd(const Kernel& k, const Matrix& x, const Matrix& y,
                         const Matrix& x_mu, double lambda);

// ---- gradient-constrained MMD ---------------------------------------------

// Witness of the gradient-constrained problem,
//   g(t) = (1/lambda) eta(t)
//        - (1/(lambda M)) sum_m [ alpha_m k(X_m, t)
//                                 + sum_i beta_{m,i} d_i k(X_m, t) ],
// where (alpha, beta) solve the (M + M d) support system.
struct WitnessVector {
  Kernel kernel = Kernel::linear();
  Matrix support;  // M x d
  Matrix xs, ys;   // the P / Q samples defining eta_hat
  Vector alpha;    // M
  Vector beta;     // M d, index (m,i) -> (m-1) d + i
  double lambda = 0.0;

  double eval(const Vector& t) const;
  Vector grad(const Vector& t) const;
};

struct GcmmdResult {
  double value2 = 0.0;  // squared distance
  WitnessVector witness;
  double penalty_bar_p = 0.0;
  double mmd2 = 0.0;
  int jitter_attempts = 0;
};

GcmmdResult gcmmd2(const Kernel& k, const Matrix& x, const Matrix& y,
                   const Matrix& x_mu, double lambda);

struct GcmmdLowRankResult {
  double value2 = 0.0;
  int rank = 0;
  bool rank_warning = false;  // rank cap hit with residual above tolerance
  double penalty_bar_p = 0.0;
  double mmd2 = 0.0;
};

// Pivoted incomplete Cholesky of the stacked bundle to residual trace
// <= chol_tol (or the rank cap), then the Woodbury identity
//   (R'R + M lambda I)^{-1} = (1/(M lambda)) (I - R'(RR' + M lambda I)^{-1} R)
// applied to the penalty term. The right-hand side is projected onto the
// span of the factor, so an empty factor yields a zero penalty.
GcmmdLowRankResult gcmmd2_lowrank(const Kernel& k, const Matrix& x, const Matrix& y,
                                  const Matrix& x_mu, double lambda,
                                  double chol_tol, int max_rank);

// ---- Lipschitz MMD ---------------------------------------------------------

// Grid estimator: representer basis {k(X_j,.), k(Y_j,.), d_i k(Z_j,.)},
// gradient constraints ||grad f(Z_j)||^2 + lambda ||f||_H^2 <= 1 at each
// grid point, solved as a linear-objective QCQP.
struct LipmmdState {
  Matrix kdata;   // (nx+ny) x (nx+ny) data gram
  Matrix b;       // (m d) x (nx+ny), b[(j,i), a] = d_i k(Z_j, P_a)
  Matrix h;       // (m d) x (m d)
  Vector weights; // [1/nx ... -1/ny ...] over data columns
  Vector delta;   // solution coefficients
  Vector duals;   // one per grid point
  double lambda = 0.0;
  double value = 0.0;
  int nx = 0, ny = 0, nz = 0, dim = 0;
  int solver_iters = 0;
};

struct LipmmdResult {
  double value = 0.0;
  Vector duals;
};

LipmmdResult lipmmd(const Kernel& k, const Matrix& x, const Matrix& y,
                    const Matrix& z, double lambda, LipmmdState* state = nullptr);

// Directional derivative of the solved estimate under kernel-matrix
// perturbations (dK, dB, dH), via the envelope theorem on the KKT system.
// Requires non-degenerate duals (max dual above dual_tol when any
// constraint is active).
double lipmmd_grad(const LipmmdState& state, const Matrix& dk, const Matrix& db,
                   const Matrix& dh, double dual_tol = 1e-12);

// Uniform grid over the bounding box of X and Y rows inflated by 20%;
// points_per_dim^d points (defaults: 64 in 1D, 16 per dim in 2D).
Matrix lipmmd_default_grid(const Matrix& x, const Matrix& y, int points_per_dim = 0);

// ---- family sweeps and references -----------------------------------------

struct FamilySweep {
  double sup = 0.0;
  double arg = 0.0;  // smallest parameter attaining the sup
};

// Exact max over the grid; ties break toward the smallest parameter.
FamilySweep optimize_over_family(const std::function<double(double)>& estimate,
                                 const std::vector<double>& grid);

// Exact empirical 1-d Wasserstein-1 between equal-size samples.
double wasserstein1d_exact(Vector x, Vector y);

// Closed forms for P = delta_0, Q = delta_theta under the Gaussian kernel of
// bandwidth 1/psi (equivalently exp(-psi^2 (x-y)^2 / 2)).
double dirac_mmd2(double psi, double theta);
// SMMD^2 with mu = delta_0: dirac_mmd2 / (lambda + 1 + psi^2).
double dirac_smmd2(double psi, double theta, double lambda);

}  // namespace smmd
