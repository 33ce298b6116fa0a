#include "smmd/kernel.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace smmd {

using nlohmann::json;

Matrix GramBundle::stacked() const {
  const Eigen::Index m = k.rows();
  const Eigen::Index md = g.rows();
  Matrix s(m + md, m + md);
  s.topLeftCorner(m, m) = k;
  s.topRightCorner(m, md) = g.transpose();
  s.bottomLeftCorner(md, m) = g;
  s.bottomRightCorner(md, md) = h;
  return s;
}

const std::vector<double>& rq_default_alphas() {
  static const std::vector<double> alphas{0.2, 0.5, 1.0, 2.0, 5.0};
  return alphas;
}

Kernel Kernel::gaussian(double bandwidth) {
  if (!(bandwidth > 0.0)) throw InputError("gaussian bandwidth must be positive");
  return Kernel(GaussianKernel{bandwidth});
}

Kernel Kernel::linear() { return Kernel(LinearKernel{}); }

Kernel Kernel::polynomial(int degree, double offset, double scale) {
  if (degree < 1) throw InputError("polynomial degree must be >= 1");
  if (offset < 0.0) throw InputError("polynomial offset must be >= 0");
  if (!(scale > 0.0)) throw InputError("polynomial scale must be positive");
  return Kernel(PolynomialKernel{degree, offset, scale});
}

Kernel Kernel::rq_mixture(std::vector<double> alphas) {
  if (alphas.empty()) throw InputError("rq mixture needs at least one alpha");
  for (double a : alphas)
    if (!(a > 0.0)) throw InputError("rq alpha must be positive");
  return Kernel(RqMixtureKernel{std::move(alphas)});
}

Kernel Kernel::composed(TopKind top, std::shared_ptr<const Net> net,
                        double top_bandwidth) {
  if (!net) throw InputError("composed kernel needs a net");
  if (top == TopKind::gaussian && !(top_bandwidth > 0.0))
    throw InputError("top bandwidth must be positive");
  return Kernel(ComposedKernel{top, top_bandwidth, std::move(net)});
}

bool Kernel::is_composed() const {
  return std::holds_alternative<ComposedKernel>(v_);
}

const Net* Kernel::net() const {
  if (auto* c = std::get_if<ComposedKernel>(&v_)) return c->net.get();
  return nullptr;
}

namespace {

void check_dims(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw InputError("kernel arguments differ in dimension");
  if (x.size() == 0) throw InputError("kernel arguments are empty");
}

// Top-kernel forms on feature vectors a, b.
double top_eval(const ComposedKernel& c, const Vector& a, const Vector& b) {
  if (c.top == TopKind::linear) return a.dot(b);
  const double t2 = c.top_bandwidth * c.top_bandwidth;
  return std::exp(-(a - b).squaredNorm() / (2.0 * t2));
}

Vector top_grad_a(const ComposedKernel& c, const Vector& a, const Vector& b) {
  if (c.top == TopKind::linear) return b;
  const double t2 = c.top_bandwidth * c.top_bandwidth;
  return (-(a - b) / t2) * top_eval(c, a, b);
}

Matrix top_grad_ab(const ComposedKernel& c, const Vector& a, const Vector& b) {
  const Eigen::Index s = a.size();
  if (c.top == TopKind::linear) return Matrix::Identity(s, s);
  const double t2 = c.top_bandwidth * c.top_bandwidth;
  const Vector u = a - b;
  const double k = top_eval(c, a, b);
  return k * (Matrix::Identity(s, s) / t2 - (u * u.transpose()) / (t2 * t2));
}

Matrix pairwise_sq_dists(const Matrix& x, const Matrix& y) {
  Vector xs = x.rowwise().squaredNorm();
  Vector ys = y.rowwise().squaredNorm();
  Matrix d = (-2.0 * x * y.transpose());
  d.colwise() += xs;
  d.rowwise() += ys.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

double Kernel::eval(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          const double bw2 = k.bandwidth * k.bandwidth;
          return std::exp(-(x - y).squaredNorm() / (2.0 * bw2));
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return x.dot(y);
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          return std::pow(k.scale * x.dot(y) + k.offset, k.degree);
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          const double r2 = (x - y).squaredNorm();
          double total = 0.0;
          for (double a : k.alphas) total += std::pow(1.0 + r2 / (2.0 * a), -a);
          return total;
        } else {
          if (x.size() != k.net->in_dim())
            throw InputError("kernel input does not match net dimension");
          return top_eval(k, k.net->forward(x), k.net->forward(y));
        }
      },
      v_);
}

Vector Kernel::grad_x(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return std::visit(
      [&](const auto& k) -> Vector {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          const double bw2 = k.bandwidth * k.bandwidth;
          const Vector u = x - y;
          return (-u / bw2) * std::exp(-u.squaredNorm() / (2.0 * bw2));
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return y;
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          const double base = k.scale * x.dot(y) + k.offset;
          return (k.degree * k.scale * std::pow(base, k.degree - 1)) * y;
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          const Vector u = x - y;
          const double r2 = u.squaredNorm();
          double coeff = 0.0;
          for (double a : k.alphas) coeff += std::pow(1.0 + r2 / (2.0 * a), -a - 1.0);
          return -coeff * u;
        } else {
          if (x.size() != k.net->in_dim())
            throw InputError("kernel input does not match net dimension");
          const Vector a = k.net->forward(x), b = k.net->forward(y);
          return k.net->jacobian(x).transpose() * top_grad_a(k, a, b);
        }
      },
      v_);
}

Matrix Kernel::grad_xy(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  const Eigen::Index d = x.size();
  return std::visit(
      [&](const auto& k) -> Matrix {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          const double bw2 = k.bandwidth * k.bandwidth;
          const Vector u = x - y;
          const double val = std::exp(-u.squaredNorm() / (2.0 * bw2));
          return val * (Matrix::Identity(d, d) / bw2 - (u * u.transpose()) / (bw2 * bw2));
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return Matrix::Identity(d, d);
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          const double base = k.scale * x.dot(y) + k.offset;
          Matrix out = (k.degree * k.scale * std::pow(base, k.degree - 1)) *
                       Matrix::Identity(d, d);
          if (k.degree > 1)
            out += (k.degree * (k.degree - 1) * k.scale * k.scale *
                    std::pow(base, k.degree - 2)) *
                   (y * x.transpose());
          return out;
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          const Vector u = x - y;
          const double r2 = u.squaredNorm();
          double ci = 0.0, cu = 0.0;
          for (double a : k.alphas) {
            const double base = 1.0 + r2 / (2.0 * a);
            ci += std::pow(base, -a - 1.0);
            cu += ((a + 1.0) / a) * std::pow(base, -a - 2.0);
          }
          return ci * Matrix::Identity(d, d) - cu * (u * u.transpose());
        } else {
          if (x.size() != k.net->in_dim())
            throw InputError("kernel input does not match net dimension");
          const Vector a = k.net->forward(x), b = k.net->forward(y);
          const Matrix jx = k.net->jacobian(x), jy = k.net->jacobian(y);
          return jx.transpose() * top_grad_ab(k, a, b) * jy;
        }
      },
      v_);
}

Matrix Kernel::gram(const Matrix& x, const Matrix& y) const {
  if (x.cols() != y.cols()) throw InputError("gram batches differ in dimension");
  return std::visit(
      [&](const auto& k) -> Matrix {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          const double bw2 = k.bandwidth * k.bandwidth;
          return (pairwise_sq_dists(x, y) / (-2.0 * bw2)).array().exp();
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return x * y.transpose();
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          Matrix base = (k.scale * (x * y.transpose())).array() + k.offset;
          return base.array().pow(k.degree);
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          const Matrix r2 = pairwise_sq_dists(x, y);
          Matrix total = Matrix::Zero(x.rows(), y.rows());
          for (double a : k.alphas)
            total += ((r2 / (2.0 * a)).array() + 1.0).pow(-a).matrix();
          return total;
        } else {
          if (x.cols() != k.net->in_dim())
            throw InputError("gram batch does not match net dimension");
          const Matrix fx = k.net->outputs(k.net->forward_batch(x));
          const Matrix fy = k.net->outputs(k.net->forward_batch(y));
          if (k.top == TopKind::linear) return fx * fy.transpose();
          const double t2 = k.top_bandwidth * k.top_bandwidth;
          return (pairwise_sq_dists(fx, fy) / (-2.0 * t2)).array().exp();
        }
      },
      v_);
}

GramBundle Kernel::gram_bundle(const Matrix& support) const {
  const Eigen::Index m = support.rows();
  const Eigen::Index d = support.cols();
  if (m == 0) throw InputError("gram_bundle needs at least one support point");
  GramBundle out;
  out.k.resize(m, m);
  out.g.resize(m * d, m);
  out.h.resize(m * d, m * d);

  if (const auto* c = std::get_if<ComposedKernel>(&v_)) {
    if (d != c->net->in_dim())
      throw InputError("support batch does not match net dimension");
    const auto cache = c->net->forward_batch(support);
    const Matrix feats = c->net->outputs(cache);  // m x s
    std::vector<Matrix> jacs(m);
    for (Eigen::Index i = 0; i < m; ++i) jacs[i] = c->net->jacobian_at(cache, i);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector a = feats.row(i);
      for (Eigen::Index j = 0; j < m; ++j) {
        const Vector b = feats.row(j);
        out.k(i, j) = top_eval(*c, a, b);
        out.g.block(i * d, j, d, 1) = jacs[i].transpose() * top_grad_a(*c, a, b);
        out.h.block(i * d, j * d, d, d) =
            jacs[i].transpose() * top_grad_ab(*c, a, b) * jacs[j];
      }
    }
  } else {
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector xi = support.row(i);
      for (Eigen::Index j = 0; j < m; ++j) {
        const Vector xj = support.row(j);
        out.k(i, j) = eval(xi, xj);
        out.g.block(i * d, j, d, 1) = grad_x(xi, xj);
        out.h.block(i * d, j * d, d, d) = grad_xy(xi, xj);
      }
    }
  }
  // Symmetrize against round-off; both blocks are Gram matrices.
  out.k = ((out.k + out.k.transpose()) / 2.0).eval();
  out.h = ((out.h + out.h.transpose()) / 2.0).eval();
  return out;
}

std::pair<double, double> Kernel::trace_terms(const Matrix& x_mu) const {
  const Eigen::Index m = x_mu.rows();
  const Eigen::Index d = x_mu.cols();
  if (m == 0) throw InputError("trace_terms needs at least one mu sample");
  return std::visit(
      [&](const auto& k) -> std::pair<double, double> {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          return {1.0, static_cast<double>(d) / (k.bandwidth * k.bandwidth)};
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return {x_mu.rowwise().squaredNorm().mean(), static_cast<double>(d)};
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          double mk = 0.0, mt = 0.0;
          for (Eigen::Index i = 0; i < m; ++i) {
            const double n2 = x_mu.row(i).squaredNorm();
            const double base = k.scale * n2 + k.offset;
            mk += std::pow(base, k.degree);
            double tr = k.degree * k.scale * d * std::pow(base, k.degree - 1);
            if (k.degree > 1)
              tr += k.degree * (k.degree - 1) * k.scale * k.scale * n2 *
                    std::pow(base, k.degree - 2);
            mt += tr;
          }
          return {mk / m, mt / m};
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          const double na = static_cast<double>(k.alphas.size());
          return {na, na * static_cast<double>(d)};
        } else {
          if (d != k.net->in_dim()) throw InputError("mu batch does not match net dimension");
          const auto cache = k.net->forward_batch(x_mu);
          const double jmean = k.net->jacobian_sq_norm_mean(cache);
          if (k.top == TopKind::linear) {
            const Matrix feats = k.net->outputs(cache);
            return {feats.rowwise().squaredNorm().mean(), jmean};
          }
          const double t2 = k.top_bandwidth * k.top_bandwidth;
          return {1.0, jmean / t2};
        }
      },
      v_);
}

std::string Kernel::to_json() const {
  json j = std::visit(
      [&](const auto& k) -> json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GaussianKernel>) {
          return json{{"type", "gaussian"}, {"bandwidth", k.bandwidth}};
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return json{{"type", "linear"}};
        } else if constexpr (std::is_same_v<T, PolynomialKernel>) {
          return json{{"type", "polynomial"},
                      {"degree", k.degree},
                      {"offset", k.offset},
                      {"scale", k.scale}};
        } else if constexpr (std::is_same_v<T, RqMixtureKernel>) {
          return json{{"type", "rq_mixture"}, {"alphas", k.alphas}};
        } else {
          json top;
          if (k.top == TopKind::linear)
            top = json{{"type", "linear"}};
          else
            top = json{{"type", "gaussian"}, {"bandwidth", k.top_bandwidth}};
          return json{{"type", "composed"},
                      {"top", top},
                      {"net", json::parse(k.net->to_json())}};
        }
      },
      v_);
  return j.dump();
}

Kernel Kernel::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("kernel json parse error: ") + e.what());
  }
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "gaussian") return gaussian(j.at("bandwidth").get<double>());
    if (type == "linear") return linear();
    if (type == "polynomial")
      return polynomial(j.at("degree").get<int>(), j.at("offset").get<double>(),
                        j.at("scale").get<double>());
    if (type == "rq_mixture") {
      if (j.contains("alphas")) return rq_mixture(j.at("alphas").get<std::vector<double>>());
      return rq_mixture();
    }
    if (type == "composed") {
      const json& top = j.at("top");
      const std::string tt = top.at("type").get<std::string>();
      auto net = std::make_shared<Net>(Net::from_json(j.at("net").dump()));
      if (tt == "linear") return composed(TopKind::linear, net);
      if (tt == "gaussian")
        return composed(TopKind::gaussian, net, top.at("bandwidth").get<double>());
      throw InputError("composed top kernel must be gaussian or linear");
    }
    throw InputError("unknown kernel type '" + type + "'");
  } catch (const json::exception& e) {
    throw InputError(std::string("kernel json field error: ") + e.what());
  }
}

}  // namespace smmd
