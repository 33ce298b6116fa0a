#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smmd/types.hpp"

namespace smmd {

// Log-distance maps between one-dimensional Gaussians: the reference is
// P = N(p_mean, p_sigma^2) and each cell compares against N(mu, sigma^2)
// from fresh per-cell seeded samples.
struct IsolineSpec {
  std::vector<double> mus;
  std::vector<double> sigmas;
  std::string distance = "mmd";       // mmd | gcmmd | opt_smmd | opt_gcmmd
  std::vector<double> bandwidths;     // mmd / gcmmd
  std::vector<double> psi_grid;       // opt_* (bandwidth = 1/psi)
  double lambda = 1.0;
  int n_samples = 1024;
  int support_size = 64;              // gcmmd support, shared with the P sample
  std::uint64_t seed = 0;
  double p_mean = 0.0;
  double p_sigma = 0.1;
};

std::string isolines_csv_header();
Matrix isolines(const IsolineSpec& spec);  // mu,sigma,param,value,log10_value

// Gradient field of the gradient-constrained witness between two
// axis-aligned 2-d Gaussians, with mu = (P + Q) / 2.
struct CriticFieldSpec {
  double p_mean[2] = {-1.0, 0.0};
  double p_sigma[2] = {0.5, 0.5};
  double q_mean[2] = {1.0, 0.0};
  double q_sigma[2] = {0.5, 0.5};
  double bandwidth = 1.0;
  double lambda = 1.0;
  int n_samples = 256;
  int support_size = 64;
  double x0_min = -3.0, x0_max = 3.0;
  double x1_min = -3.0, x1_max = 3.0;
  int grid_count = 20;
  std::uint64_t seed = 0;
};

std::string critic_field_csv_header();
// x0,x1,grad_x0,grad_x1,unit_x0,unit_x1,witness,mu_density
Matrix critic_field(const CriticFieldSpec& spec);

}  // namespace smmd
