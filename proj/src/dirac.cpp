#include <cmath>

#include "smmd/dynamics.hpp"
#include "smmd/estimators.hpp"
#include "smmd/rng.hpp"

namespace smmd {

namespace {

// Forward-mode dual number over (theta, psi) for the closed-form losses.
struct D2 {
  double v = 0.0, dt = 0.0, dp = 0.0;
};

D2 operator+(D2 a, D2 b) { return {a.v + b.v, a.dt + b.dt, a.dp + b.dp}; }
D2 operator-(D2 a, D2 b) { return {a.v - b.v, a.dt - b.dt, a.dp - b.dp}; }
D2 operator*(D2 a, D2 b) {
  return {a.v * b.v, a.dt * b.v + a.v * b.dt, a.dp * b.v + a.v * b.dp};
}
D2 operator/(D2 a, D2 b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.dt - a.v * inv * b.dt) * inv, (a.dp - a.v * inv * b.dp) * inv};
}
D2 operator*(double c, D2 a) { return {c * a.v, c * a.dt, c * a.dp}; }
D2 operator*(D2 a, double c) { return c * a; }
D2 operator+(double c, D2 a) { return {c + a.v, a.dt, a.dp}; }
D2 operator+(D2 a, double c) { return c + a; }
D2 operator-(double c, D2 a) { return {c - a.v, -a.dt, -a.dp}; }
D2 operator-(D2 a, double c) { return {a.v - c, a.dt, a.dp}; }
D2 operator/(D2 a, double c) { return {a.v / c, a.dt / c, a.dp / c}; }
D2 operator-(D2 a) { return {-a.v, -a.dt, -a.dp}; }
D2 dexp(D2 a) {
  const double e = std::exp(a.v);
  return {e, e * a.dt, e * a.dp};
}
D2 dsqrt(D2 a) {
  const double s = std::sqrt(a.v);
  const double h = 0.5 / s;
  return {s, h * a.dt, h * a.dp};
}
D2 dabs(D2 a) {
  const double sign = a.v >= 0.0 ? 1.0 : -1.0;
  return {sign * a.v, sign * a.dt, sign * a.dp};
}
D2 sq(D2 a) { return a * a; }

struct DiracForms {
  D2 theta, psi;
  D2 mmd2;  // 2 (1 - exp(-psi^2 theta^2 / 2))

  DiracForms(double t, double p) {
    theta = {t, 1.0, 0.0};
    psi = {p, 0.0, 1.0};
    mmd2 = 2.0 * (1.0 - dexp(-0.5 * sq(psi) * sq(theta)));
  }
  // d eta_hat / dt at t: psi^2 [ (t - theta) e^{-psi^2 (t-theta)^2/2}
  //                              - t e^{-psi^2 t^2/2} ]
  D2 eta_prime(D2 t) const {
    const D2 e0 = dexp(-0.5 * sq(psi) * sq(t));
    const D2 et = dexp(-0.5 * sq(psi) * sq(t - theta));
    return sq(psi) * ((t - theta) * et - t * e0);
  }
};

constexpr int kUnifNodes = 64;
constexpr int kGcMuSamples = 64;

// Fixed quasi-random mu draws for the GC-MMD loss, mu = N(0, 10^2).
Matrix gc_mu_samples() {
  Matrix mu(kGcMuSamples, 1);
  for (int i = 0; i < kGcMuSamples; ++i)
    mu(i, 0) = 10.0 * inverse_normal_cdf((i + 0.5) / static_cast<double>(kGcMuSamples));
  return mu;
}

double lipmmd_disc2(const DiracLossSpec& spec, double theta, double psi) {
  Matrix x(1, 1), y(1, 1);
  x(0, 0) = 0.0;
  y(0, 0) = theta;
  const Kernel k = Kernel::gaussian(1.0 / psi);
  const Matrix z = lipmmd_default_grid(x, y, 64);
  const double v = lipmmd(k, x, y, z, spec.lambda).value;
  return v * v;
}

double gcmmd_disc2(const DiracLossSpec& spec, double theta, double psi,
                   const Matrix& mu) {
  Matrix x(1, 1), y(1, 1);
  x(0, 0) = 0.0;
  y(0, 0) = theta;
  const Kernel k = Kernel::gaussian(1.0 / psi);
  return gcmmd2(k, x, y, mu, spec.lambda).value2;
}

}  // namespace

DiracLossKind dirac_loss_from_name(const std::string& name) {
  if (name == "MMD" || name == "mmd") return DiracLossKind::mmd;
  if (name == "MMD-GP" || name == "mmd_gp") return DiracLossKind::mmd_gp;
  if (name == "MMD-GP-Unif" || name == "mmd_gp_unif") return DiracLossKind::mmd_gp_unif;
  if (name == "SN-MMD" || name == "sn_mmd") return DiracLossKind::sn_mmd;
  if (name == "Sobolev-MMD" || name == "sobolev_mmd") return DiracLossKind::sobolev_mmd;
  if (name == "CenteredSobolev-MMD" || name == "centered_sobolev_mmd")
    return DiracLossKind::centered_sobolev_mmd;
  if (name == "LipMMD" || name == "lipmmd") return DiracLossKind::lipmmd;
  if (name == "GC-MMD" || name == "gc_mmd") return DiracLossKind::gc_mmd;
  if (name == "SMMD" || name == "smmd") return DiracLossKind::smmd;
  throw InputError("unknown DiracGAN loss '" + name + "'");
}

std::string dirac_loss_name(DiracLossKind kind) {
  switch (kind) {
    case DiracLossKind::mmd: return "MMD";
    case DiracLossKind::mmd_gp: return "MMD-GP";
    case DiracLossKind::mmd_gp_unif: return "MMD-GP-Unif";
    case DiracLossKind::sn_mmd: return "SN-MMD";
    case DiracLossKind::sobolev_mmd: return "Sobolev-MMD";
    case DiracLossKind::centered_sobolev_mmd: return "CenteredSobolev-MMD";
    case DiracLossKind::lipmmd: return "LipMMD";
    case DiracLossKind::gc_mmd: return "GC-MMD";
    case DiracLossKind::smmd: return "SMMD";
  }
  return "?";
}

DiracCell dirac_cell(const DiracLossSpec& spec, double theta, double psi) {
  if (!(psi > 0.0)) throw InputError("dirac losses need psi > 0");
  DiracCell cell;
  cell.theta = theta;
  cell.inv_psi = 1.0 / psi;

  const bool needs_witness = spec.kind == DiracLossKind::mmd_gp ||
                             spec.kind == DiracLossKind::mmd_gp_unif ||
                             spec.kind == DiracLossKind::sobolev_mmd ||
                             spec.kind == DiracLossKind::centered_sobolev_mmd;
  if (theta == 0.0 && needs_witness) {
    cell.singular = true;  // normalized critic undefined at P = Q
    return cell;
  }

  switch (spec.kind) {
    case DiracLossKind::mmd:
    case DiracLossKind::mmd_gp:
    case DiracLossKind::mmd_gp_unif:
    case DiracLossKind::sobolev_mmd:
    case DiracLossKind::centered_sobolev_mmd:
    case DiracLossKind::sn_mmd:
    case DiracLossKind::smmd: {
      const DiracForms f(theta, psi);
      D2 disc2 = f.mmd2;
      D2 loss = -f.mmd2;
      if (spec.kind == DiracLossKind::sn_mmd) {
        const DiracForms unit(theta, 1.0);
        // Bandwidth pinned to 1; psi carries no gradient.
        disc2 = {2.0 * unit.mmd2.v, 2.0 * unit.mmd2.dt, 0.0};
        loss = -disc2;
      } else if (spec.kind == DiracLossKind::smmd) {
        disc2 = f.mmd2 / (spec.lambda + 1.0 + sq(f.psi));
        loss = -disc2;
      } else if (spec.kind == DiracLossKind::mmd_gp) {
        const D2 mmd = dsqrt(f.mmd2);
        const D2 pen = sq(dabs(f.eta_prime({0.0, 0.0, 0.0})) / mmd - 1.0);
        loss = -f.mmd2 + spec.gp_weight * pen;
      } else if (spec.kind == DiracLossKind::mmd_gp_unif) {
        const D2 mmd = dsqrt(f.mmd2);
        D2 pen{0.0, 0.0, 0.0};
        for (int i = 0; i < kUnifNodes; ++i) {
          const double u = (i + 0.5) / static_cast<double>(kUnifNodes);
          pen = pen + sq(dabs(f.eta_prime(u * f.theta)) / mmd - 1.0);
        }
        loss = -f.mmd2 + (spec.gp_weight / kUnifNodes) * pen;
      } else if (spec.kind == DiracLossKind::sobolev_mmd ||
                 spec.kind == DiracLossKind::centered_sobolev_mmd) {
        const D2 s = (sq(f.eta_prime({0.0, 0.0, 0.0})) + sq(f.eta_prime(f.theta))) /
                     (2.0 * f.mmd2);
        if (spec.kind == DiracLossKind::sobolev_mmd)
          loss = -f.mmd2 + spec.gp_weight * sq(s - 1.0);
        else
          loss = -f.mmd2 + spec.gp_weight * sq(s);
      }
      cell.disc2 = disc2.v;
      cell.critic_loss = loss.v;
      cell.v_theta = -disc2.dt;
      cell.v_psi = -loss.dp;
      break;
    }
    case DiracLossKind::lipmmd:
    case DiracLossKind::gc_mmd: {
      const bool gc = spec.kind == DiracLossKind::gc_mmd;
      const Matrix mu = gc ? gc_mu_samples() : Matrix();
      auto disc2_at = [&](double t, double p) {
        return gc ? gcmmd_disc2(spec, t, p, mu) : lipmmd_disc2(spec, t, p);
      };
      cell.disc2 = disc2_at(theta, psi);
      cell.critic_loss = -cell.disc2;
      const double ht = 1e-4 * (1.0 + std::abs(theta));
      const double hp = 1e-4 * (1.0 + psi);
      cell.v_theta = theta == 0.0
                         ? 0.0
                         : -(disc2_at(theta + ht, psi) - disc2_at(theta - ht, psi)) /
                               (2.0 * ht);
      cell.v_psi = (disc2_at(theta, psi + hp) - disc2_at(theta, psi - hp)) / (2.0 * hp);
      break;
    }
  }
  if (theta == 0.0) cell.v_theta = 0.0;  // symmetry
  cell.v_inv_psi = -cell.v_psi / (psi * psi);
  return cell;
}

namespace {

std::vector<double> axis(double lo, double hi, int count, bool log_spaced) {
  if (count < 1) throw InputError("grid axis needs at least one point");
  if (log_spaced && !(lo > 0.0)) throw InputError("log-spaced axis needs positive bounds");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  for (int i = 0; i < count; ++i) {
    const double f = static_cast<double>(i) / (count - 1);
    out[i] = log_spaced ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)))
                        : lo + f * (hi - lo);
  }
  return out;
}

}  // namespace

VectorFieldGrid dirac_field(const DiracLossSpec& spec, const DiracGridSpec& grid) {
  VectorFieldGrid out;
  out.thetas = axis(grid.theta_min, grid.theta_max, grid.theta_count, grid.log_spaced);
  out.inv_psis =
      axis(grid.inv_psi_min, grid.inv_psi_max, grid.inv_psi_count, grid.log_spaced);
  out.cells.reserve(out.thetas.size() * out.inv_psis.size());
  for (double theta : out.thetas)
    for (double ip : out.inv_psis) out.cells.push_back(dirac_cell(spec, theta, 1.0 / ip));
  return out;
}

std::string VectorFieldGrid::csv_header() {
  return "theta,inv_psi,critic_loss,disc2,v_theta,v_psi,v_inv_psi,"
         "unit_v_theta,unit_v_inv_psi,singular";
}

Matrix VectorFieldGrid::csv_rows() const {
  Matrix rows(static_cast<Eigen::Index>(cells.size()), 10);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const DiracCell& c = cells[i];
    const double norm = std::hypot(c.v_theta, c.v_inv_psi);
    rows(i, 0) = c.theta;
    rows(i, 1) = c.inv_psi;
    rows(i, 2) = c.critic_loss;
    rows(i, 3) = c.disc2;
    rows(i, 4) = c.v_theta;
    rows(i, 5) = c.v_psi;
    rows(i, 6) = c.v_inv_psi;
    rows(i, 7) = norm > 0.0 ? c.v_theta / norm : 0.0;
    rows(i, 8) = norm > 0.0 ? c.v_inv_psi / norm : 0.0;
    rows(i, 9) = c.singular ? 1.0 : 0.0;
  }
  return rows;
}

Trajectory simulate(const DiracLossSpec& spec, double theta0, double psi0,
                    int steps, double step_size) {
  if (!(psi0 > 0.0)) throw InputError("simulate needs psi0 > 0");
  if (steps < 0) throw InputError("steps must be >= 0");
  Trajectory traj;
  double theta = theta0, psi = psi0;
  traj.points.push_back({theta, psi});
  for (int s = 0; s < steps; ++s) {
    const DiracCell cell = dirac_cell(spec, theta, psi);
    theta += step_size * cell.v_theta;
    psi += step_size * cell.v_psi;
    if (psi < 1e-9) psi = 1e-9;
    traj.points.push_back({theta, psi});
    if (std::abs(theta) > 1e6) {
      traj.diverged = true;
      break;
    }
  }
  return traj;
}

}  // namespace smmd
