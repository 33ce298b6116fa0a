#include "smmd/net.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace smmd {

using nlohmann::json;

void NetGrads::add_scaled(const NetGrads& other, double s) {
  for (std::size_t l = 0; l < dw.size(); ++l) {
    dw[l] += s * other.dw[l];
    db[l] += s * other.db[l];
    dgamma[l] += s * other.dgamma[l];
  }
}

void NetGrads::scale(double s) {
  for (std::size_t l = 0; l < dw.size(); ++l) {
    dw[l] *= s;
    db[l] *= s;
    dgamma[l] *= s;
  }
}

double NetGrads::squared_norm() const {
  double t = 0.0;
  for (std::size_t l = 0; l < dw.size(); ++l)
    t += dw[l].squaredNorm() + db[l].squaredNorm() + dgamma[l] * dgamma[l];
  return t;
}

double spectral_norm(const Matrix& w, Vector* left, Vector* right) {
  if (w.size() == 0) throw InputError("spectral_norm of empty matrix");
  // Power iteration on W'W with a fixed start vector; tol 1e-9, <= 500 iters.
  Vector v(w.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = 1.0 + 0.01 * static_cast<double>(i % 7);
  v.normalize();
  double s = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector u = w * v;
    double nu = u.norm();
    if (nu == 0.0) {  // start vector fell in the null space; nudge it
      v((it % v.size())) += 1.0;
      v.normalize();
      continue;
    }
    Vector v_next = w.transpose() * (u / nu);
    double s_next = v_next.norm();
    if (s_next == 0.0) break;
    v_next /= s_next;
    // Converge the vector, not just the value: downstream gradients use the
    // singular pair.
    const bool done = (v_next - v).lpNorm<Eigen::Infinity>() <= 1e-9 &&
                      std::abs(s_next - s) <= 1e-9 * std::max(1.0, s_next);
    v = v_next;
    s = s_next;
    if (done) break;
  }
  if (left || right) {
    Vector u = w * v;
    double nu = u.norm();
    if (left) *left = nu > 0 ? Vector(u / nu) : Vector(Vector::Zero(w.rows()));
    if (right) *right = v;
  }
  return s;
}

double condition_number(const Matrix& w) {
  Eigen::JacobiSVD<Matrix> svd(w);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

Net::Net(std::vector<Layer> layers, double leak, Parametrization parametrization)
    : layers_(std::move(layers)), leak_(leak), param_(parametrization) {
  if (layers_.empty()) throw InputError("net must have at least one layer");
  if (!(leak_ > 0.0 && leak_ < 1.0)) throw InputError("leak must be in (0, 1)");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.w.rows() == 0 || layer.w.cols() == 0)
      throw InputError("empty weight matrix in layer " + std::to_string(l));
    if (layer.b.size() != layer.w.rows())
      throw InputError("bias size mismatch in layer " + std::to_string(l));
    if (l > 0 && layers_[l - 1].w.rows() != layer.w.cols())
      throw InputError("layer dimensions do not chain at layer " + std::to_string(l));
    if (param_ == Parametrization::spectral && !(layer.gamma > 0.0))
      throw InputError("spectral gamma must be positive");
  }
  rebuild_effective();
}

Net Net::make(std::vector<Layer> layers, double leak, Parametrization p) {
  if (p == Parametrization::spectral)
    for (auto& layer : layers) layer.gamma = spectral_norm(layer.w);
  return Net(std::move(layers), leak, p);
}

void Net::rebuild_effective() {
  eff_.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (param_ == Parametrization::standard) {
      eff_[l] = layers_[l].w;
    } else {
      const double s = spectral_norm(layers_[l].w);
      if (s <= 0.0) throw NumericError("zero spectral norm in spectral layer");
      eff_[l] = (layers_[l].gamma / s) * layers_[l].w;
    }
  }
}

Matrix Net::effective_weight(int l) const { return eff_[l]; }

double Net::layer_spectral_norm(int l) const {
  if (param_ == Parametrization::spectral) return layers_[l].gamma;
  return spectral_norm(layers_[l].w);
}

Matrix Net::mask_of(const Matrix& pre) const {
  // Slope of the activation; pre == 0 takes the positive branch.
  return (pre.array() >= 0.0).select(Matrix::Ones(pre.rows(), pre.cols()),
                                     Matrix::Constant(pre.rows(), pre.cols(), leak_));
}

Vector Net::forward(const Vector& x, std::vector<Vector>* preacts) const {
  if (x.size() != in_dim()) throw InputError("input dimension mismatch");
  Vector a = x;
  if (preacts) preacts->clear();
  for (int l = 0; l < depth(); ++l) {
    Vector h = eff_[l] * a + layers_[l].b;
    if (preacts) preacts->push_back(h);
    if (l + 1 < depth())
      a = (h.array() >= 0.0).select(h, leak_ * h);
    else
      a = h;
  }
  return a;
}

Net::Cache Net::forward_batch(const Matrix& x_rows) const {
  if (x_rows.cols() != in_dim()) throw InputError("input dimension mismatch");
  Cache c;
  c.owner = this;
  c.revision = revision_;
  c.input = x_rows.transpose();
  const Matrix* below = &c.input;
  for (int l = 0; l < depth(); ++l) {
    Matrix h = (eff_[l] * (*below)).colwise() + layers_[l].b;
    c.pre.push_back(std::move(h));
    if (l + 1 < depth()) {
      const Matrix& hh = c.pre.back();
      c.act.push_back((hh.array() >= 0.0).select(hh, leak_ * hh));
      below = &c.act.back();
    }
  }
  return c;
}

Matrix Net::outputs(const Cache& c) const {
  check_cache(c);
  return c.pre.back().transpose();
}

void Net::check_cache(const Cache& c) const {
  if (c.owner != this || c.revision != revision_)
    throw InputError("stale forward cache: net was modified after forward_batch");
}

Matrix Net::jacobian(const Vector& x) const {
  std::vector<Vector> pre;
  forward(x, &pre);
  Matrix j = eff_[0];
  for (int l = 1; l < depth(); ++l) {
    Vector m = (pre[l - 1].array() >= 0.0)
                   .select(Vector::Ones(pre[l - 1].size()),
                           Vector::Constant(pre[l - 1].size(), leak_));
    j = eff_[l] * m.asDiagonal() * j;
  }
  return j;
}

Matrix Net::jacobian_at(const Cache& c, Eigen::Index sample) const {
  check_cache(c);
  Matrix j = eff_[0];
  for (int l = 1; l < depth(); ++l) {
    Vector m = (c.pre[l - 1].col(sample).array() >= 0.0)
                   .select(Vector::Ones(c.pre[l - 1].rows()),
                           Vector::Constant(c.pre[l - 1].rows(), leak_));
    j = eff_[l] * m.asDiagonal() * j;
  }
  return j;
}

double Net::jacobian_sq_norm_mean(const Cache& c) const {
  check_cache(c);
  const Eigen::Index n = c.batch();
  double t = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) t += jacobian_at(c, i).squaredNorm();
  return t / static_cast<double>(n);
}

NetGrads Net::zero_grads() const {
  NetGrads g;
  for (const Layer& layer : layers_) {
    g.dw.push_back(Matrix::Zero(layer.w.rows(), layer.w.cols()));
    g.db.push_back(Vector::Zero(layer.b.size()));
    g.dgamma.push_back(0.0);
  }
  return g;
}

void Net::backward_outputs(const Cache& c, const Matrix& upstream, NetGrads* grads,
                           Matrix* input_grads) const {
  check_cache(c);
  if (upstream.rows() != c.batch() || upstream.cols() != out_dim())
    throw InputError("upstream gradient shape mismatch");
  Matrix delta = upstream.transpose();  // d_L x n
  for (int l = depth() - 1; l >= 0; --l) {
    const Matrix& below = (l == 0) ? c.input : c.act[l - 1];
    if (grads) {
      grads->dw[l] += delta * below.transpose();
      grads->db[l] += delta.rowwise().sum();
    }
    if (l == 0) {
      if (input_grads)
        *input_grads = (eff_[0].transpose() * delta).transpose();
      break;
    }
    Matrix back = eff_[l].transpose() * delta;
    delta = mask_of(c.pre[l - 1]).cwiseProduct(back);
  }
}

void Net::backward_jacobian(const Cache& c, const std::vector<Matrix>& coeffs,
                            NetGrads* grads) const {
  check_cache(c);
  if (static_cast<Eigen::Index>(coeffs.size()) != c.batch())
    throw InputError("one jacobian coefficient per sample expected");
  const int nl = depth();
  for (Eigen::Index i = 0; i < c.batch(); ++i) {
    if (coeffs[i].size() == 0) continue;
    // V^l = W^l diag(mask^{l-1}); J = V^L ... V^1 with masks held fixed.
    std::vector<Vector> masks(nl);  // mask feeding layer l
    masks[0] = Vector::Ones(in_dim());
    for (int l = 1; l < nl; ++l)
      masks[l] = (c.pre[l - 1].col(i).array() >= 0.0)
                     .select(Vector::Ones(c.pre[l - 1].rows()),
                             Vector::Constant(c.pre[l - 1].rows(), leak_));
    std::vector<Matrix> prefix(nl + 1);  // prefix[l] = V^l ... V^1, prefix[0] = I
    prefix[0] = Matrix::Identity(in_dim(), in_dim());
    for (int l = 1; l <= nl; ++l)
      prefix[l] = eff_[l - 1] * masks[l - 1].asDiagonal() * prefix[l - 1];
    std::vector<Matrix> suffix(nl + 1);  // suffix[l] = V^L ... V^{l+1}
    suffix[nl] = Matrix::Identity(out_dim(), out_dim());
    for (int l = nl - 1; l >= 0; --l)
      suffix[l] = suffix[l + 1] * eff_[l] * masks[l].asDiagonal();
    // d<C, J>/dW^l = suffix[l+1]' C prefix[l]' diag(mask^{l-1})
    for (int l = 0; l < nl; ++l)
      grads->dw[l] += suffix[l + 1].transpose() * coeffs[i] *
                      prefix[l].transpose() * masks[l].asDiagonal();
  }
}

void Net::backward_jacobian_sq_norm(const Cache& c, const Vector& per_sample,
                                    NetGrads* grads) const {
  check_cache(c);
  std::vector<Matrix> coeffs(c.batch());
  for (Eigen::Index i = 0; i < c.batch(); ++i)
    if (per_sample(i) != 0.0) coeffs[i] = 2.0 * per_sample(i) * jacobian_at(c, i);
  backward_jacobian(c, coeffs, grads);
}

void Net::reduce_grads(NetGrads& grads) const {
  if (param_ == Parametrization::standard) return;
  for (int l = 0; l < depth(); ++l) {
    const Layer& layer = layers_[l];
    Vector u, v;
    const double s = spectral_norm(layer.w, &u, &v);
    if (s <= 0.0) throw NumericError("zero spectral norm in spectral layer");
    const Matrix ge = grads.dw[l];  // gradient w.r.t. the effective weight
    const double inner = (ge.array() * layer.w.array()).sum();
    grads.dgamma[l] += inner / s;
    grads.dw[l] = (layer.gamma / s) * ge -
                  (layer.gamma * inner / (s * s)) * (u * v.transpose());
  }
}

void Net::apply_delta(const NetGrads& grads, double s) {
  for (int l = 0; l < depth(); ++l) {
    layers_[l].w += s * grads.dw[l];
    layers_[l].b += s * grads.db[l];
    if (param_ == Parametrization::spectral) layers_[l].gamma += s * grads.dgamma[l];
  }
  ++revision_;
  rebuild_effective();
}

std::pair<double, Net> Net::normalize_to_unit_layers() const {
  std::vector<Layer> out = layers_;
  double running = 1.0;
  for (int l = 0; l < depth(); ++l) {
    const Matrix w = eff_[l];
    const double s = spectral_norm(w);
    if (s <= 0.0) throw NumericError("cannot normalize a zero layer");
    running *= s;
    out[l].w = w / s;
    out[l].b = layers_[l].b / running;
    out[l].gamma = 1.0;
  }
  return {running, Net(std::move(out), leak_, Parametrization::standard)};
}

std::vector<double> Net::layer_condition_numbers() const {
  std::vector<double> out;
  out.reserve(layers_.size());
  for (int l = 0; l < depth(); ++l) out.push_back(condition_number(eff_[l]));
  return out;
}

std::string Net::to_json() const {
  json j;
  j["leak"] = leak_;
  j["parametrization"] = param_ == Parametrization::spectral ? "spectral" : "standard";
  json layers = json::array();
  for (const Layer& layer : layers_) {
    json lj;
    lj["rows"] = layer.w.rows();
    lj["cols"] = layer.w.cols();
    std::vector<double> w(static_cast<std::size_t>(layer.w.size()));
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
      for (Eigen::Index cidx = 0; cidx < layer.w.cols(); ++cidx)
        w[static_cast<std::size_t>(r * layer.w.cols() + cidx)] = layer.w(r, cidx);
    lj["w"] = w;
    lj["b"] = std::vector<double>(layer.b.data(), layer.b.data() + layer.b.size());
    if (param_ == Parametrization::spectral) lj["gamma"] = layer.gamma;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j.dump();
}

Net Net::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("net json parse error: ") + e.what());
  }
  try {
    const double leak = j.at("leak").get<double>();
    const std::string p = j.at("parametrization").get<std::string>();
    Parametrization param;
    if (p == "standard")
      param = Parametrization::standard;
    else if (p == "spectral")
      param = Parametrization::spectral;
    else
      throw InputError("unknown parametrization '" + p + "'");
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
      Layer layer;
      const Eigen::Index rows = lj.at("rows").get<Eigen::Index>();
      const Eigen::Index cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("w").get<std::vector<double>>();
      const auto b = lj.at("b").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows)
        throw InputError("net json layer size mismatch");
      layer.w.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index cidx = 0; cidx < cols; ++cidx)
          layer.w(r, cidx) = w[static_cast<std::size_t>(r * cols + cidx)];
      layer.b = Eigen::Map<const Vector>(b.data(), rows);
      if (param == Parametrization::spectral) layer.gamma = lj.at("gamma").get<double>();
      layers.push_back(std::move(layer));
    }
    return Net(std::move(layers), leak, param);
  } catch (const json::exception& e) {
    throw InputError(std::string("net json field error: ") + e.what());
  }
}

}  // namespace smmd
