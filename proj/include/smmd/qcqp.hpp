#pragma once

#include <vector>

#include "smmd/types.hpp"

namespace smmd {

// maximize c'x  subject to  x' P_j x <= 1 for every j,
// with each P_j symmetric positive semidefinite. x = 0 is strictly feasible,
// so a log-barrier path can always start there.
struct Qcqp {
  Vector c;
  std::vector<Matrix> constraints;
};

struct QcqpSolution {
  Vector x;
  Vector duals;  // mu_j >= 0, one per constraint
  int newton_iters = 0;
  int barrier_stages = 0;
  bool polished = false;  // active-set KKT refinement succeeded
};

struct QcqpOptions {
  double tol = 1e-9;        // KKT residual target
  int max_newton = 20000;
  double jitter = 1e-12;    // added to near-singular Newton systems
};

// Log-barrier path following with damped Newton, then an active-set Newton
// polish of the KKT system for high-accuracy primal/dual pairs.
// Throws NumericError on unbounded or non-convergent instances.
QcqpSolution solve_qcqp(const Qcqp& problem, const QcqpOptions& opts = {});

// max over j of the three KKT residuals (stationarity scaled by ||c||,
// complementary slackness, primal feasibility violation).
double qcqp_kkt_residual(const Qcqp& problem, const QcqpSolution& sol);

}  // namespace smmd
