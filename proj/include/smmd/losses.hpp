#pragma once

#include <string>

#include "smmd/kernel.hpp"
#include "smmd/net.hpp"
#include "smmd/types.hpp"

namespace smmd {

// Critic objectives for the alternating loop, with analytic gradients both in
// the critic parameters and in the generated samples Y. The representation is
// the critic net phi; the kernel is a Gaussian or linear top kernel applied
// to phi outputs.
//
//   smmd:   MMD^2 / (1 + w E_X ||grad phi||_F^2)
//   swgan:  (mean phi(X) - mean phi(Y))
//             / sqrt(1 + w (mean phi(X)^2 + E_X ||grad phi||_F^2))
//   mmd_gp: MMD^2 - gp_w E_interp (||grad eta_hat|| - 1)^2
//   gcmmd:  (MMD_V^2 - bar_P(eta_hat)) / lambda  via the support-point system
//
// The critic ascends `value`; the generator descends it through dy.

enum class TrainLoss { smmd, swgan, mmd_gp, gcmmd };

TrainLoss train_loss_from_name(const std::string& name);
std::string train_loss_name(TrainLoss loss);

struct LossOptions {
  double lambda = 1.0;         // RKHS weight (gcmmd)
  double scale_weight = 10.0;  // the "w" above
  double gp_weight = 1.0;
  double top_bandwidth = 1.0;
  int support_size = 16;       // gcmmd support points, taken from the X batch
  bool biased_mmd2 = false;    // scaled losses default to the unbiased estimator
};

struct LossEval {
  double value = 0.0;
  double mmd2 = 0.0;       // discrepancy part (swgan: the mean difference)
  double grad_term = 0.0;  // E_X ||grad phi||_F^2 (mmd_gp: the penalty value)
  double denom = 0.0;      // scaled-loss denominator, 0 when not applicable
  NetGrads critic_grads;   // reduced to stored parameters
  Matrix dy;               // d value / d Y (n_y x d), empty unless requested
};

// x_interp is required for mmd_gp (points where the gradient penalty is
// evaluated) and ignored otherwise.
LossEval critic_loss(TrainLoss kind, const Net& critic, TopKind top,
                     const LossOptions& opts, const Matrix& x, const Matrix& y,
                     const Matrix* x_interp, bool want_critic_grads,
                     bool want_y_grads);

}  // namespace smmd
