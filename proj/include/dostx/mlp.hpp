#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace dostx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Named view of a trainable tensor and its gradient slot. Optimizers,
// checkpoints and finite-difference checks all go through this.
struct TensorRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Dense feed-forward stack applied row-wise: input n x in -> n x out.
// Softplus between layers; `activate_last` adds it after the final
// affine map as well (used by the single-layer graph-encoder maps).
class Mlp {
 public:
  struct Layer {
    Matrix w;   // out x in
    Matrix b;   // out x 1
    Matrix gw;
    Matrix gb;
  };

  struct Cache {
    Matrix input;
    std::vector<Matrix> pre;   // affine outputs per layer
    std::vector<Matrix> post;  // after activation (== pre where none)
  };

  Mlp() = default;
  Mlp(std::vector<int> dims, bool activate_last);

  void init(Rng& rng);  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  // Accumulates parameter gradients, returns d(loss)/d(input).
  Matrix backward(const Cache& cache, const Matrix& dout);

  void collect(const std::string& prefix, std::vector<TensorRef>& out);
  void zero_grad();

  int in_dim() const { return static_cast<int>(layers_.front().w.cols()); }
  int out_dim() const { return static_cast<int>(layers_.back().w.rows()); }
  std::size_t n_layers() const { return layers_.size(); }

 private:
  std::vector<Layer> layers_;
  bool activate_last_ = false;
};

}  // namespace dostx
