#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smmd/types.hpp"

namespace smmd {

// Fully-connected Leaky-ReLU network
//   h^0 = x,   h^l = W^l a^{l-1} + b^l,   a^l = lrelu(h^l) for l < L,
//   phi(x) = h^L.
// The activation derivative at a pre-activation of exactly 0 is taken from
// the positive branch (slope 1); the kink set has measure zero.
//
// Under the spectral parametrization each layer stores an unnormalized matrix
// and a learned scale gamma; the effective weight is gamma * W / ||W||_op,
// with the operator norm obtained by power iteration whose singular vectors
// are treated as constants when differentiating.

enum class Parametrization { standard, spectral };

struct Layer {
  Matrix w;           // d_l x d_{l-1}; unnormalized under spectral
  Vector b;           // d_l
  double gamma = 1.0; // spectral scale, unused for standard
};

struct NetGrads {
  // dw holds gradients w.r.t. the effective weights until Net::reduce_grads
  // converts them to gradients w.r.t. the stored parameters.
  std::vector<Matrix> dw;
  std::vector<Vector> db;
  std::vector<double> dgamma;

  void add_scaled(const NetGrads& other, double s);
  void scale(double s);
  double squared_norm() const;
};

double spectral_norm(const Matrix& w, Vector* left = nullptr, Vector* right = nullptr);
double condition_number(const Matrix& w);  // sigma_max / sigma_min; +inf if singular

class Net {
 public:
  Net(std::vector<Layer> layers, double leak, Parametrization parametrization);

  // Spectral net whose effective weights initially equal the given matrices
  // (gamma_l is initialized to ||W_l||_op).
  static Net make(std::vector<Layer> layers, double leak, Parametrization p);

  int depth() const { return static_cast<int>(layers_.size()); }
  int in_dim() const { return static_cast<int>(layers_.front().w.cols()); }
  int out_dim() const { return static_cast<int>(layers_.back().w.rows()); }
  double leak() const { return leak_; }
  Parametrization parametrization() const { return param_; }
  const Layer& layer(int l) const { return layers_[l]; }
  std::uint64_t revision() const { return revision_; }

  Matrix effective_weight(int l) const;
  double layer_spectral_norm(int l) const;  // of the effective weight

  struct Cache {
    const Net* owner = nullptr;
    std::uint64_t revision = 0;
    Matrix input;              // d_0 x n (samples as columns)
    std::vector<Matrix> pre;   // pre-activations h^l, d_l x n
    std::vector<Matrix> act;   // a^l = lrelu(h^l) for l < L
    Eigen::Index batch() const { return input.cols(); }
  };

  Vector forward(const Vector& x, std::vector<Vector>* preacts = nullptr) const;
  Cache forward_batch(const Matrix& x_rows) const;  // x_rows: n x d_0
  Matrix outputs(const Cache& c) const;             // n x d_L

  Matrix jacobian(const Vector& x) const;                        // d_L x d_0
  Matrix jacobian_at(const Cache& c, Eigen::Index sample) const;
  double jacobian_sq_norm_mean(const Cache& c) const;            // mean ||J||_F^2

  // Reverse mode for sum_i <upstream_i, phi(x_i)>; upstream is n x d_L.
  // Parameter gradients accumulate into *grads (w.r.t. effective weights);
  // input gradients (n x d_0) are written if requested.
  void backward_outputs(const Cache& c, const Matrix& upstream, NetGrads* grads,
                        Matrix* input_grads = nullptr) const;

  // Reverse mode for sum_i <coeff_i, J(x_i)> with the activation masks held
  // fixed; coeff_i is d_L x d_0. Entries of `coeffs` paired with samples.
  void backward_jacobian(const Cache& c, const std::vector<Matrix>& coeffs,
                         NetGrads* grads) const;

  // Convenience: gradient of sum_i c_i ||J(x_i)||_F^2.
  void backward_jacobian_sq_norm(const Cache& c, const Vector& per_sample,
                                 NetGrads* grads) const;

  NetGrads zero_grads() const;
  // Convert effective-weight gradients into stored-parameter gradients
  // (identity for standard nets; spectral chain rule otherwise).
  void reduce_grads(NetGrads& grads) const;
  // params += s * grads (training update); bumps the revision.
  void apply_delta(const NetGrads& grads, double s);

  // Rescale to per-layer unit operator norm: returns (scale, net') with
  // phi(x) = scale * phi'(x) pointwise, cond(W^l) unchanged.
  std::pair<double, Net> normalize_to_unit_layers() const;

  std::vector<double> layer_condition_numbers() const;

  std::string to_json() const;
  static Net from_json(const std::string& text);

 private:
  void check_cache(const Cache& c) const;
  Matrix mask_of(const Matrix& pre) const;  // slope per entry (1 or leak)
  void rebuild_effective();

  std::vector<Layer> layers_;
  double leak_;
  Parametrization param_;
  std::uint64_t revision_ = 1;
  std::vector<Matrix> eff_;  // effective weights, rebuilt on mutation
};

}  // namespace smmd
