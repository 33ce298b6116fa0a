#pragma once

#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "smmd/net.hpp"
#include "smmd/types.hpp"

namespace smmd {

// Derivative-augmented Gram blocks on a support set X_1..X_M in R^d.
// Flat index convention: the pair (m, i), 1 <= i <= d, maps to row
// (m-1)*d + i, so gradients are stacked per support point.
struct GramBundle {
  Matrix k;  // M x M,        k(X_m, X_m')
  Matrix g;  // (M d) x M,    g[(m,i), m'] = d/dx_i k(X_m, X_m')
  Matrix h;  // (M d) x (M d) h[(m,i),(m',j)] = d^2/(dx_i dy_j) k(X_m, X_m')

  // [[K, G^T], [G, H]], the Gram matrix of {k(X_m,.), d_i k(X_m,.)}.
  Matrix stacked() const;
};

enum class TopKind { gaussian, linear };

struct GaussianKernel {
  double bandwidth;  // k(x,y) = exp(-||x-y||^2 / (2 bw^2))
};
struct LinearKernel {};
struct PolynomialKernel {
  int degree;
  double offset;
  double scale;  // k(x,y) = (scale x.y + offset)^degree
};
struct RqMixtureKernel {
  std::vector<double> alphas;  // sum_a (1 + ||x-y||^2/(2a))^(-a)
};
struct ComposedKernel {
  TopKind top;
  double top_bandwidth;  // Gaussian top only
  std::shared_ptr<const Net> net;
};

const std::vector<double>& rq_default_alphas();  // {0.2, 0.5, 1, 2, 5}

class Kernel {
 public:
  using Variant = std::variant<GaussianKernel, LinearKernel, PolynomialKernel,
                               RqMixtureKernel, ComposedKernel>;

  static Kernel gaussian(double bandwidth);
  static Kernel linear();
  static Kernel polynomial(int degree, double offset, double scale);
  static Kernel rq_mixture(std::vector<double> alphas = rq_default_alphas());
  static Kernel composed(TopKind top, std::shared_ptr<const Net> net,
                         double top_bandwidth = 1.0);

  const Variant& variant() const { return v_; }
  bool is_composed() const;
  const Net* net() const;  // nullptr unless composed

  double eval(const Vector& x, const Vector& y) const;
  Vector grad_x(const Vector& x, const Vector& y) const;   // d/dx_i k(x, y)
  Matrix grad_xy(const Vector& x, const Vector& y) const;  // d^2/(dx_i dy_j)

  // Batches are rows-as-samples. gram(X, Y)(i, j) = k(X_i, Y_j).
  Matrix gram(const Matrix& x, const Matrix& y) const;
  GramBundle gram_bundle(const Matrix& support) const;

  // ( mean_m k(x_m, x_m), mean_m tr grad_xy(x_m, x_m) ) over the mu sample.
  std::pair<double, double> trace_terms(const Matrix& x_mu) const;

  std::string to_json() const;
  static Kernel from_json(const std::string& text);

 private:
  explicit Kernel(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

}  // namespace smmd
