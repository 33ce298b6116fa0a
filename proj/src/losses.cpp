#include "smmd/losses.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace smmd {

TrainLoss train_loss_from_name(const std::string& name) {
  if (name == "smmd") return TrainLoss::smmd;
  if (name == "swgan") return TrainLoss::swgan;
  if (name == "mmd_gp" || name == "mmd-gp") return TrainLoss::mmd_gp;
  if (name == "gcmmd") return TrainLoss::gcmmd;
  throw InputError("unknown training loss '" + name + "'");
}

std::string train_loss_name(TrainLoss loss) {
  switch (loss) {
    case TrainLoss::smmd: return "smmd";
    case TrainLoss::swgan: return "swgan";
    case TrainLoss::mmd_gp: return "mmd_gp";
    case TrainLoss::gcmmd: return "gcmmd";
  }
  return "?";
}

namespace {

// Closed forms of the top kernel on feature vectors. For the Gaussian,
// T1 = d^2 K / (da db) and the same-argument second derivatives are -T1.
struct TopOps {
  TopKind kind;
  double t2;  // bandwidth^2, unused for linear

  double eval(const Vector& a, const Vector& b) const {
    if (kind == TopKind::linear) return a.dot(b);
    return std::exp(-(a - b).squaredNorm() / (2.0 * t2));
  }
  Vector grad1(const Vector& a, const Vector& b) const {
    if (kind == TopKind::linear) return b;
    return (-(a - b) / t2) * eval(a, b);
  }
  Vector grad2(const Vector& a, const Vector& b) const {
    if (kind == TopKind::linear) return a;
    return ((a - b) / t2) * eval(a, b);
  }
  Matrix curv(const Vector& a, const Vector& b) const {  // T1
    const Eigen::Index s = a.size();
    if (kind == TopKind::linear) return Matrix::Identity(s, s);
    const Vector u = a - b;
    return eval(a, b) * (Matrix::Identity(s, s) / t2 - (u * u.transpose()) / (t2 * t2));
  }
  // d<Xi, T1(a - b)>/da; the b-adjoint is the negative.
  Vector curv_adjoint(const Vector& a, const Vector& b, const Matrix& xi) const {
    if (kind == TopKind::linear) return Vector::Zero(a.size());
    const Vector u = a - b;
    const double kv = eval(a, b);
    const double quad = xi.trace() - u.dot(xi * u) / t2;
    return -(kv / (t2 * t2)) * (quad * u + (xi + xi.transpose()) * u);
  }
};

Matrix pairwise_sq_dists(const Matrix& x, const Matrix& y) {
  Vector xs = x.rowwise().squaredNorm();
  Vector ys = y.rowwise().squaredNorm();
  Matrix d = (-2.0 * x * y.transpose());
  d.colwise() += xs;
  d.rowwise() += ys.transpose();
  return d.cwiseMax(0.0);
}

struct FeatMmd {
  double value = 0.0;
  Matrix da, db;
};

// MMD^2 on feature batches with gradients in the features.
FeatMmd mmd2_features(const TopOps& top, const Matrix& a, const Matrix& b,
                      bool biased, bool want_grads) {
  const Eigen::Index n = a.rows(), m = b.rows();
  if (!biased && (n < 2 || m < 2))
    throw InputError("unbiased estimator needs at least 2 samples per side");
  FeatMmd out;

  Matrix kxx, kyy, kxy;
  if (top.kind == TopKind::linear) {
    kxx = a * a.transpose();
    kyy = b * b.transpose();
    kxy = a * b.transpose();
  } else {
    kxx = (pairwise_sq_dists(a, a) / (-2.0 * top.t2)).array().exp();
    kyy = (pairwise_sq_dists(b, b) / (-2.0 * top.t2)).array().exp();
    kxy = (pairwise_sq_dists(a, b) / (-2.0 * top.t2)).array().exp();
  }

  double sxx, syy;
  if (biased) {
    sxx = kxx.mean();
    syy = kyy.mean();
  } else {
    sxx = (kxx.sum() - kxx.trace()) / static_cast<double>(n * (n - 1));
    syy = (kyy.sum() - kyy.trace()) / static_cast<double>(m * (m - 1));
  }
  out.value = sxx + syy - 2.0 * kxy.mean();
  if (!want_grads) return out;

  const double wxx = biased ? 2.0 / static_cast<double>(n * n)
                            : 2.0 / static_cast<double>(n * (n - 1));
  const double wyy = biased ? 2.0 / static_cast<double>(m * m)
                            : 2.0 / static_cast<double>(m * (m - 1));
  const double wxy = -2.0 / static_cast<double>(n * m);

  if (top.kind == TopKind::linear) {
    // d/da_p = wxx sum_q a_q + wxy sum_j b_j, minus the diagonal term for
    // the U-statistic; the V-statistic keeps it (d||a_p||^2 = 2 a_p).
    const Eigen::RowVectorXd suma = a.colwise().sum();
    const Eigen::RowVectorXd sumb = b.colwise().sum();
    out.da = (wxx * suma + wxy * sumb).replicate(n, 1);
    out.db = (wyy * sumb + wxy * suma).replicate(m, 1);
    if (!biased) {
      out.da -= wxx * a;
      out.db -= wyy * b;
    }
  } else {
    Matrix gxx = wxx * kxx;
    Matrix gyy = wyy * kyy;
    if (!biased) {
      gxx.diagonal().setZero();
      gyy.diagonal().setZero();
    }
    const Matrix gxy = wxy * kxy;
    out.da = (gxx * a - gxx.rowwise().sum().asDiagonal() * a + gxy * b -
              gxy.rowwise().sum().asDiagonal() * a) /
             top.t2;
    out.db = (gyy * b - gyy.rowwise().sum().asDiagonal() * b +
              gxy.transpose() * a - gxy.colwise().sum().transpose().asDiagonal() * b) /
             top.t2;
  }
  return out;
}

TopOps make_top(TopKind top, const LossOptions& opts) {
  if (top == TopKind::gaussian && !(opts.top_bandwidth > 0.0))
    throw InputError("top bandwidth must be positive");
  return TopOps{top, opts.top_bandwidth * opts.top_bandwidth};
}

LossEval smmd_loss(const Net& critic, TopKind top, const LossOptions& opts,
                   const Matrix& x, const Matrix& y, bool want_cg, bool want_y) {
  const TopOps ops = make_top(top, opts);
  const auto cx = critic.forward_batch(x);
  const auto cy = critic.forward_batch(y);
  const Matrix a = critic.outputs(cx);
  const Matrix b = critic.outputs(cy);
  const double gbar = critic.jacobian_sq_norm_mean(cx);
  // The scale term follows the top kernel: Gaussian tops scale by the
  // expected gradient norm alone, the linear top adds E||phi||^2.
  const double feat2 =
      top == TopKind::linear ? a.rowwise().squaredNorm().mean() : 0.0;
  const double denom = 1.0 + opts.scale_weight * (gbar + feat2);

  FeatMmd f = mmd2_features(ops, a, b, opts.biased_mmd2, want_cg || want_y);
  LossEval out;
  out.mmd2 = f.value;
  out.grad_term = gbar;
  out.denom = denom;
  out.value = f.value / denom;

  if (want_cg || want_y) {
    NetGrads grads = critic.zero_grads();
    if (want_cg) {
      Matrix da = f.da / denom;
      if (top == TopKind::linear)
        da -= (2.0 * f.value * opts.scale_weight /
               (denom * denom * static_cast<double>(x.rows()))) *
              a;
      critic.backward_outputs(cx, da, &grads);
      critic.backward_outputs(cy, f.db / denom, &grads, want_y ? &out.dy : nullptr);
      const double coeff = -f.value * opts.scale_weight /
                           (denom * denom * static_cast<double>(x.rows()));
      critic.backward_jacobian_sq_norm(cx, Vector::Constant(x.rows(), coeff), &grads);
      critic.reduce_grads(grads);
      out.critic_grads = std::move(grads);
    } else {
      critic.backward_outputs(cy, f.db / denom, nullptr, &out.dy);
    }
  }
  return out;
}

LossEval swgan_loss(const Net& critic, const LossOptions& opts, const Matrix& x,
                    const Matrix& y, bool want_cg, bool want_y) {
  if (critic.out_dim() != 1) throw InputError("swgan needs a scalar critic");
  const auto cx = critic.forward_batch(x);
  const auto cy = critic.forward_batch(y);
  const Vector a = critic.outputs(cx).col(0);
  const Vector b = critic.outputs(cy).col(0);
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  const double gbar = critic.jacobian_sq_norm_mean(cx);
  const double num = a.mean() - b.mean();
  const double den2 = 1.0 + opts.scale_weight * (a.squaredNorm() / n + gbar);
  const double den = std::sqrt(den2);

  LossEval out;
  out.mmd2 = num;
  out.grad_term = gbar;
  out.denom = den2;
  out.value = num / den;

  if (want_cg || want_y) {
    Matrix db = Matrix::Constant(b.size(), 1, -1.0 / (m * den));
    if (want_cg) {
      NetGrads grads = critic.zero_grads();
      Matrix da =
          (Vector::Constant(a.size(), 1.0 / (n * den)) -
           (num * opts.scale_weight / (n * den2 * den)) * a)
              .matrix();
      critic.backward_outputs(cx, da, &grads);
      critic.backward_outputs(cy, db, &grads, want_y ? &out.dy : nullptr);
      const double coeff = -num * opts.scale_weight / (2.0 * den2 * den * n);
      critic.backward_jacobian_sq_norm(cx, Vector::Constant(a.size(), coeff), &grads);
      critic.reduce_grads(grads);
      out.critic_grads = std::move(grads);
    } else {
      critic.backward_outputs(cy, db, nullptr, &out.dy);
    }
  }
  return out;
}

LossEval mmd_gp_loss(const Net& critic, TopKind top, const LossOptions& opts,
                     const Matrix& x, const Matrix& y, const Matrix* x_interp,
                     bool want_cg, bool want_y) {
  if (!x_interp) throw InputError("mmd_gp needs interpolation points");
  const TopOps ops = make_top(top, opts);
  const auto cx = critic.forward_batch(x);
  const auto cy = critic.forward_batch(y);
  const auto ct = critic.forward_batch(*x_interp);
  const Matrix a = critic.outputs(cx);
  const Matrix b = critic.outputs(cy);
  const Matrix c = critic.outputs(ct);
  const Eigen::Index n = a.rows(), m = b.rows(), nt = c.rows();

  FeatMmd f = mmd2_features(ops, a, b, opts.biased_mmd2, want_cg || want_y);

  // Penalty on the unnormalized witness eta_hat, evaluated at the
  // interpolation points: (||grad eta_hat(x_t)|| - 1)^2.
  double penalty = 0.0;
  std::vector<Vector> qs(nt), gs(nt);
  std::vector<Matrix> jts(nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const Vector ct_feat = c.row(t);
    Vector q = Vector::Zero(a.cols());
    for (Eigen::Index i = 0; i < n; ++i) q += ops.grad2(Vector(a.row(i)), ct_feat) / n;
    for (Eigen::Index j = 0; j < m; ++j) q -= ops.grad2(Vector(b.row(j)), ct_feat) / m;
    jts[t] = critic.jacobian_at(ct, t);
    gs[t] = jts[t].transpose() * q;
    qs[t] = q;
    const double r = gs[t].norm();
    penalty += (r - 1.0) * (r - 1.0) / nt;
  }

  LossEval out;
  out.mmd2 = f.value;
  out.grad_term = penalty;
  out.value = f.value - opts.gp_weight * penalty;

  if (!want_cg && !want_y) return out;
  if (!want_cg) {
    critic.backward_outputs(cy, f.db, nullptr, &out.dy);
    return out;
  }

  NetGrads grads = critic.zero_grads();
  Matrix da = f.da, db = f.db;
  Matrix dc = Matrix::Zero(nt, c.cols());
  std::vector<Matrix> jac_coeffs(nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const double r = gs[t].norm();
    if (r == 0.0) continue;
    const Vector gbar_t =
        (-opts.gp_weight / nt) * (2.0 * (r - 1.0) / r) * gs[t];
    jac_coeffs[t] = qs[t] * gbar_t.transpose();
    const Vector qbar = jts[t] * gbar_t;
    const Vector ct_feat = c.row(t);
    if (ops.kind == TopKind::linear) {
      for (Eigen::Index i = 0; i < n; ++i) da.row(i) += qbar.transpose() / n;
      for (Eigen::Index j = 0; j < m; ++j) db.row(j) -= qbar.transpose() / m;
    } else {
      Vector dct = Vector::Zero(c.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector t1q = ops.curv(Vector(a.row(i)), ct_feat) * qbar;
        da.row(i) += t1q.transpose() / n;
        dct -= t1q / n;
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        const Vector t1q = ops.curv(Vector(b.row(j)), ct_feat) * qbar;
        db.row(j) -= t1q.transpose() / m;
        dct += t1q / m;
      }
      dc.row(t) += dct.transpose();
    }
  }
  critic.backward_outputs(cx, da, &grads);
  critic.backward_outputs(cy, db, &grads);
  critic.backward_outputs(ct, dc, &grads);
  critic.backward_jacobian(ct, jac_coeffs, &grads);
  critic.reduce_grads(grads);
  out.critic_grads = std::move(grads);
  if (want_y) critic.backward_outputs(cy, f.db, nullptr, &out.dy);
  return out;
}

LossEval gcmmd_loss(const Net& critic, TopKind top, const LossOptions& opts,
                    const Matrix& x, const Matrix& y, bool want_cg, bool want_y) {
  if (!(opts.lambda > 0.0)) throw InputError("gcmmd needs lambda > 0");
  const TopOps ops = make_top(top, opts);
  const Eigen::Index ms =
      (opts.support_size > 0) ? std::min<Eigen::Index>(opts.support_size, x.rows())
                              : x.rows();
  const Matrix support = x.topRows(ms);

  const auto cx = critic.forward_batch(x);
  const auto cy = critic.forward_batch(y);
  const auto cs = critic.forward_batch(support);
  const Matrix a = critic.outputs(cx);
  const Matrix b = critic.outputs(cy);
  const Matrix s = critic.outputs(cs);
  const Eigen::Index n = a.rows(), m = b.rows(), d = x.cols();
  const double lambda = opts.lambda;

  std::vector<Matrix> jac(ms);
  for (Eigen::Index p = 0; p < ms; ++p) jac[p] = critic.jacobian_at(cs, p);

  // Support system A = [[K, G'],[G, H]] + ms*lambda*I and rhs v.
  Matrix big(ms + ms * d, ms + ms * d);
  for (Eigen::Index p = 0; p < ms; ++p) {
    const Vector sp = s.row(p);
    for (Eigen::Index q = 0; q < ms; ++q) {
      const Vector sq = s.row(q);
      big(p, q) = ops.eval(sp, sq);
      big.block(ms + p * d, q, d, 1) = jac[p].transpose() * ops.grad1(sp, sq);
      big.block(ms + p * d, ms + q * d, d, d) =
          jac[p].transpose() * ops.curv(sp, sq) * jac[q];
    }
  }
  big.topRightCorner(ms, ms * d) = big.bottomLeftCorner(ms * d, ms).transpose();
  big = ((big + big.transpose()) / 2.0).eval();
  big.diagonal().array() += static_cast<double>(ms) * lambda;

  Vector v(ms + ms * d);
  std::vector<Vector> qvec(ms);
  for (Eigen::Index p = 0; p < ms; ++p) {
    const Vector sp = s.row(p);
    double v1 = 0.0;
    Vector q = Vector::Zero(s.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector ai = a.row(i);
      v1 += ops.eval(ai, sp) / n;
      q += ops.grad2(ai, sp) / n;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector bj = b.row(j);
      v1 -= ops.eval(bj, sp) / m;
      q -= ops.grad2(bj, sp) / m;
    }
    v(p) = v1;
    qvec[p] = q;
    v.segment(ms + p * d, d) = jac[p].transpose() * q;
  }

  Eigen::LLT<Matrix> llt(big);
  if (llt.info() != Eigen::Success) {
    big.diagonal().array() += 1e-10 * std::max(1.0, big.trace() / big.rows());
    llt.compute(big);
    if (llt.info() != Eigen::Success)
      throw NumericError("gcmmd loss: support system not positive definite");
  }
  const Vector w = llt.solve(v);
  const double bar_p = v.dot(w);

  // The value part uses the V-statistic: bar_P is built from eta_hat, and
  // ||eta_hat||^2 is exactly the biased estimator.
  FeatMmd f = mmd2_features(ops, a, b, /*biased=*/true, want_cg || want_y);
  LossEval out;
  out.mmd2 = f.value;
  out.value = (f.value - bar_p) / lambda;
  out.grad_term = critic.jacobian_sq_norm_mean(cx);

  if (!want_cg && !want_y) return out;

  Matrix da = f.da / lambda, db = f.db / lambda;
  Matrix dsfeat = Matrix::Zero(ms, s.cols());
  std::vector<Matrix> jbar(ms);
  for (Eigen::Index p = 0; p < ms; ++p) jbar[p] = Matrix::Zero(jac[p].rows(), jac[p].cols());

  const Vector wa = w.head(ms);
  // w's gradient blocks, per support point.
  std::vector<Vector> wb(ms);
  for (Eigen::Index p = 0; p < ms; ++p) wb[p] = w.segment(ms + p * d, d);

  // rhs adjoint: vbar = -(2/lambda) w.
  for (Eigen::Index p = 0; p < ms; ++p) {
    const Vector sp = s.row(p);
    const double ca = -(2.0 / lambda) * wa(p);
    const Vector chi = -(2.0 / lambda) * wb[p];
    // v1 chain
    Vector dsp = Vector::Zero(s.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector ai = a.row(i);
      da.row(i) += (ca / n) * ops.grad1(ai, sp).transpose();
      dsp += (ca / n) * ops.grad2(ai, sp);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector bj = b.row(j);
      db.row(j) -= (ca / m) * ops.grad1(bj, sp).transpose();
      dsp -= (ca / m) * ops.grad2(bj, sp);
    }
    // v2 chain: v2_p = J_p' q_p
    jbar[p] += qvec[p] * chi.transpose();
    const Vector qbar = jac[p] * chi;
    if (ops.kind == TopKind::linear) {
      for (Eigen::Index i = 0; i < n; ++i) da.row(i) += qbar.transpose() / n;
      for (Eigen::Index j = 0; j < m; ++j) db.row(j) -= qbar.transpose() / m;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector t1q = ops.curv(Vector(a.row(i)), sp) * qbar;
        da.row(i) += t1q.transpose() / n;
        dsp -= t1q / n;
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        const Vector t1q = ops.curv(Vector(b.row(j)), sp) * qbar;
        db.row(j) -= t1q.transpose() / m;
        dsp += t1q / m;
      }
    }
    dsfeat.row(p) += dsp.transpose();
  }

  // Matrix adjoint: Abar = (1/lambda) w w'.
  for (Eigen::Index p = 0; p < ms; ++p) {
    const Vector sp = s.row(p);
    Vector dsp = Vector::Zero(s.cols());
    for (Eigen::Index q = 0; q < ms; ++q) {
      const Vector sq = s.row(q);
      // K block (both symmetric halves).
      const double thk = (2.0 / lambda) * wa(p) * wa(q);
      dsp += thk * ops.grad1(sp, sq);
      // G block: theta = (2/lambda) wa(q) wb[p].
      const Vector theta = (2.0 / lambda) * wa(q) * wb[p];
      jbar[p] += ops.grad1(sp, sq) * theta.transpose();
      const Vector xi = jac[p] * theta;
      if (ops.kind == TopKind::linear) {
        dsfeat.row(q) += xi.transpose();
      } else {
        const Matrix t1 = ops.curv(sp, sq);
        dsp -= t1 * xi;
        dsfeat.row(q) += (t1 * xi).transpose();
      }
      // H block: Theta_h = (1/lambda) wb[p] wb[q]'.
      const Matrix th = (1.0 / lambda) * (wb[p] * wb[q].transpose());
      const Matrix t1 = ops.curv(sp, sq);
      jbar[p] += t1 * jac[q] * th.transpose();
      jbar[q] += t1 * jac[p] * th;
      const Matrix xi2 = jac[p] * th * jac[q].transpose();
      const Vector uadj = ops.curv_adjoint(sp, sq, xi2);
      dsp += uadj;
      dsfeat.row(q) -= uadj.transpose();
    }
    dsfeat.row(p) += dsp.transpose();
  }

  if (want_cg) {
    NetGrads grads = critic.zero_grads();
    critic.backward_outputs(cx, da, &grads);
    critic.backward_outputs(cy, db, &grads, want_y ? &out.dy : nullptr);
    critic.backward_outputs(cs, dsfeat, &grads);
    critic.backward_jacobian(cs, jbar, &grads);
    critic.reduce_grads(grads);
    out.critic_grads = std::move(grads);
  } else {
    critic.backward_outputs(cy, db, nullptr, &out.dy);
  }
  return out;
}

}  // namespace

LossEval critic_loss(TrainLoss kind, const Net& critic, TopKind top,
                     const LossOptions& opts, const Matrix& x, const Matrix& y,
                     const Matrix* x_interp, bool want_critic_grads,
                     bool want_y_grads) {
  if (x.cols() != y.cols()) throw InputError("batches differ in dimension");
  switch (kind) {
    case TrainLoss::smmd:
      return smmd_loss(critic, top, opts, x, y, want_critic_grads, want_y_grads);
    case TrainLoss::swgan:
      return swgan_loss(critic, opts, x, y, want_critic_grads, want_y_grads);
    case TrainLoss::mmd_gp:
      return mmd_gp_loss(critic, top, opts, x, y, x_interp, want_critic_grads,
                         want_y_grads);
    case TrainLoss::gcmmd:
      return gcmmd_loss(critic, top, opts, x, y, want_critic_grads, want_y_grads);
  }
  throw InputError("unknown training loss");
}

}  // namespace smmd
