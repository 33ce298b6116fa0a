#include <cmath>

#include "smmd/estimators.hpp"
#include "smmd/figures.hpp"
#include "smmd/io.hpp"
#include "smmd/rng.hpp"

namespace smmd {

namespace {

Matrix gaussian_sample(Rng& rng, int n, double mean, double sigma) {
  Matrix out(n, 1);
  for (int i = 0; i < n; ++i) out(i, 0) = mean + sigma * rng.normal();
  return out;
}

double cell_distance(const IsolineSpec& spec, const Matrix& x, const Matrix& y,
                     double param, double* arg_out) {
  if (spec.distance == "mmd") {
    return std::sqrt(std::max(0.0, mmd2_biased(Kernel::gaussian(param), x, y)));
  }
  if (spec.distance == "gcmmd") {
    const Matrix support = x.topRows(std::min<Eigen::Index>(spec.support_size, x.rows()));
    return std::sqrt(
        std::max(0.0, gcmmd2(Kernel::gaussian(param), x, y, support, spec.lambda).value2));
  }
  if (spec.distance == "opt_smmd") {
    const auto sweep = optimize_over_family(
        [&](double psi) {
          return smmd(Kernel::gaussian(1.0 / psi), x, y, x, spec.lambda).value;
        },
        spec.psi_grid);
    if (arg_out) *arg_out = sweep.arg;
    return sweep.sup;
  }
  if (spec.distance == "opt_gcmmd") {
    const Matrix support = x.topRows(std::min<Eigen::Index>(spec.support_size, x.rows()));
    const auto sweep = optimize_over_family(
        [&](double psi) {
          return std::sqrt(std::max(
              0.0, gcmmd2(Kernel::gaussian(1.0 / psi), x, y, support, spec.lambda).value2));
        },
        spec.psi_grid);
    if (arg_out) *arg_out = sweep.arg;
    return sweep.sup;
  }
  throw InputError("unknown isoline distance '" + spec.distance + "'");
}

}  // namespace

std::string isolines_csv_header() { return "mu,sigma,param,value,log10_value"; }

Matrix isolines(const IsolineSpec& spec) {
  if (spec.mus.empty() || spec.sigmas.empty()) throw InputError("isoline grid is empty");
  if (spec.n_samples < 2) throw InputError("isolines need at least 2 samples per cell");
  const bool per_bandwidth = spec.distance == "mmd" || spec.distance == "gcmmd";
  if (per_bandwidth && spec.bandwidths.empty())
    throw InputError("isolines distance '" + spec.distance + "' needs bandwidths");
  if (!per_bandwidth && spec.psi_grid.empty())
    throw InputError("isolines distance '" + spec.distance + "' needs a psi grid");

  const std::size_t params = per_bandwidth ? spec.bandwidths.size() : 1;
  Matrix rows(static_cast<Eigen::Index>(spec.mus.size() * spec.sigmas.size() * params), 5);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < spec.mus.size(); ++i) {
    for (std::size_t j = 0; j < spec.sigmas.size(); ++j) {
      Rng rng = Rng::stream(spec.seed,
                            "isolines/" + std::to_string(i) + "/" + std::to_string(j));
      const Matrix x = gaussian_sample(rng, spec.n_samples, spec.p_mean, spec.p_sigma);
      const Matrix y = gaussian_sample(rng, spec.n_samples, spec.mus[i], spec.sigmas[j]);
      if (per_bandwidth) {
        for (double bw : spec.bandwidths) {
          const double v = cell_distance(spec, x, y, bw, nullptr);
          rows.row(r++) << spec.mus[i], spec.sigmas[j], bw, v,
              std::log10(std::max(v, 1e-300));
        }
      } else {
        double arg = 0.0;
        const double v = cell_distance(spec, x, y, 0.0, &arg);
        rows.row(r++) << spec.mus[i], spec.sigmas[j], arg, v,
            std::log10(std::max(v, 1e-300));
      }
    }
  }
  return rows;
}

std::string critic_field_csv_header() {
  return "x0,x1,grad_x0,grad_x1,unit_x0,unit_x1,witness,mu_density";
}

Matrix critic_field(const CriticFieldSpec& spec) {
  if (spec.grid_count < 2) throw InputError("critic field grid needs >= 2 points per axis");
  if (spec.n_samples < 2) throw InputError("critic field needs >= 2 samples per side");
  // Each side's stream is keyed by its own parameters, so identical specs
  // draw identical sample sets and swapping P and Q swaps the sets exactly.
  auto side_stream = [&](const double mean[2], const double sigma[2]) {
    return Rng::stream(spec.seed, "critic_field/" + format_double(mean[0]) + "," +
                                      format_double(mean[1]) + "," +
                                      format_double(sigma[0]) + "," +
                                      format_double(sigma[1]));
  };
  Rng rng_p = side_stream(spec.p_mean, spec.p_sigma);
  Rng rng_q = side_stream(spec.q_mean, spec.q_sigma);
  Matrix x(spec.n_samples, 2), y(spec.n_samples, 2);
  for (int i = 0; i < spec.n_samples; ++i)
    for (int j = 0; j < 2; ++j) {
      x(i, j) = spec.p_mean[j] + spec.p_sigma[j] * rng_p.normal();
      y(i, j) = spec.q_mean[j] + spec.q_sigma[j] * rng_q.normal();
    }
  // mu = (P + Q)/2: interleave support points from both sides.
  const int half = std::max(1, spec.support_size / 2);
  Matrix support(2 * half, 2);
  support.topRows(half) = x.topRows(half);
  support.bottomRows(half) = y.topRows(half);

  const Kernel k = Kernel::gaussian(spec.bandwidth);
  const GcmmdResult res = gcmmd2(k, x, y, support, spec.lambda);

  auto density = [&](double a, double b) {
    auto comp = [](double a0, double a1, const double mean[2], const double sig[2]) {
      const double z0 = (a0 - mean[0]) / sig[0];
      const double z1 = (a1 - mean[1]) / sig[1];
      return std::exp(-0.5 * (z0 * z0 + z1 * z1)) / (2.0 * M_PI * sig[0] * sig[1]);
    };
    return 0.5 * comp(a, b, spec.p_mean, spec.p_sigma) +
           0.5 * comp(a, b, spec.q_mean, spec.q_sigma);
  };

  Matrix rows(static_cast<Eigen::Index>(spec.grid_count) * spec.grid_count, 8);
  Eigen::Index r = 0;
  for (int i = 0; i < spec.grid_count; ++i) {
    const double a = spec.x0_min +
                     (spec.x0_max - spec.x0_min) * i / (spec.grid_count - 1.0);
    for (int j = 0; j < spec.grid_count; ++j) {
      const double b = spec.x1_min +
                       (spec.x1_max - spec.x1_min) * j / (spec.grid_count - 1.0);
      Vector t(2);
      t << a, b;
      const Vector g = res.witness.grad(t);
      const double norm = g.norm();
      rows.row(r++) << a, b, g(0), g(1), (norm > 0 ? g(0) / norm : 0.0),
          (norm > 0 ? g(1) / norm : 0.0), res.witness.eval(t), density(a, b);
    }
  }
  return rows;
}

}  // namespace smmd
