#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "smmd/losses.hpp"
#include "smmd/net.hpp"
#include "smmd/types.hpp"

namespace smmd {

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  std::vector<double> mg, vg;
  long t = 0;
};

AdamState make_adam_state(const Net& net);

// Bias-corrected descent step: params -= lr * mhat / (sqrt(vhat) + eps).
void adam_step(AdamState& state, Net& net, const NetGrads& grads, double lr,
               double beta1, double beta2, double eps);

// ---- DiracGAN parameter dynamics -------------------------------------------

// P = delta_0, Q = delta_theta, Gaussian kernel of bandwidth 1/psi. Each
// variant is the loss the critic descends; the generator descends the squared
// discrepancy of the same cell.
enum class DiracLossKind {
  mmd,
  mmd_gp,
  mmd_gp_unif,
  sn_mmd,
  sobolev_mmd,
  centered_sobolev_mmd,
  lipmmd,
  gc_mmd,
  smmd,
};

DiracLossKind dirac_loss_from_name(const std::string& name);
std::string dirac_loss_name(DiracLossKind kind);

struct DiracLossSpec {
  DiracLossKind kind = DiracLossKind::mmd;
  double lambda = 1.0;
  double gp_weight = 1.0;
};

struct DiracCell {
  double theta = 0.0;
  double inv_psi = 0.0;
  double critic_loss = 0.0;  // the listed loss at the cell
  double disc2 = 0.0;        // squared discrepancy at the cell
  double v_theta = 0.0;      // -d disc2 / d theta
  double v_psi = 0.0;        // -d critic_loss / d psi
  double v_inv_psi = 0.0;    // v_psi mapped onto the 1/psi axis
  bool singular = false;     // flagged cells export zero vectors
};

struct VectorFieldGrid {
  std::vector<double> thetas;
  std::vector<double> inv_psis;
  std::vector<DiracCell> cells;  // theta-major

  static std::string csv_header();
  Matrix csv_rows() const;
};

struct DiracGridSpec {
  double theta_min = 0.25, theta_max = 20.0;
  double inv_psi_min = 0.25, inv_psi_max = 20.0;
  int theta_count = 40, inv_psi_count = 40;
  bool log_spaced = true;
};

// Loss, discrepancy and both gradient components at one (theta, psi) point.
DiracCell dirac_cell(const DiracLossSpec& spec, double theta, double psi);
VectorFieldGrid dirac_field(const DiracLossSpec& spec, const DiracGridSpec& grid);

struct Trajectory {
  std::vector<std::array<double, 2>> points;  // (theta, psi), start included
  bool diverged = false;
};

// Simultaneous explicit gradient steps in (theta, psi).
Trajectory simulate(const DiracLossSpec& spec, double theta0, double psi0,
                    int steps, double step_size);

// ---- toy IGM training -------------------------------------------------------

struct NetSpec {
  std::vector<int> widths;  // d_0, d_1, ..., d_L
  double leak = 0.2;
  Parametrization parametrization = Parametrization::standard;
  double init_scale = 1.0;      // multiplies the 1/sqrt(fan_in) normal init
  bool orthogonal_init = false; // semi-orthogonal layers (condition number 1)
};

Net build_net(const NetSpec& spec, std::uint64_t seed, std::string_view tag);

struct TargetSpec {
  // "mixture4": equal mixture at (+-1, +-1) with the given sigma;
  // "generator_init": samples drawn through a frozen copy of the generator
  // at initialization (P = Q_theta0).
  std::string kind = "mixture4";
  double sigma = 0.05;
};

struct TrainConfig {
  NetSpec generator{{2, 32, 32, 2}};
  NetSpec critic{{2, 64, 64, 1}};
  TrainLoss loss = TrainLoss::smmd;
  TopKind top = TopKind::gaussian;
  LossOptions loss_opts;
  TargetSpec target;
  int latent_dim = 2;
  int batch_size = 64;
  int critic_steps = 5;
  int generator_steps = 1000;
  double lr = 1e-3;
  double beta1 = 0.5, beta2 = 0.9, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int cond_every = 100;        // condition-number snapshots
  int checkpoint_every = 0;    // 0 = none (final nets always kept)

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct TrainHistory {
  // step, critic_loss, gen_loss, mmd2, grad_term, denom, collapse
  Matrix rows;
  static std::string csv_header();
  // step, layer, cond, spectral_norm
  Matrix cond_rows;
  static std::string cond_csv_header();
  std::vector<std::pair<int, std::string>> generator_checkpoints;
  std::vector<std::pair<int, std::string>> critic_checkpoints;
  std::string final_generator;  // net json
  std::string final_critic;
};

TrainHistory train_toy(const TrainConfig& config);

// Samples from the configured target / the trained generator, for held-out
// evaluation.
Matrix sample_target(const TrainConfig& config, int n, std::uint64_t seed,
                     std::string_view tag);
Matrix sample_generator(const Net& generator, int latent_dim, int n,
                        std::uint64_t seed, std::string_view tag);

}  // namespace smmd
