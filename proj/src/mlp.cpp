#include "dostx/mlp.hpp"

#include "dostx/errors.hpp"

namespace dostx {

Mlp::Mlp(std::vector<int> dims, bool activate_last) : activate_last_(activate_last) {
  if (dims.size() < 2) throw ValidationError("Mlp needs at least one layer");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.w = Matrix::Zero(dims[l + 1], dims[l]);
    layer.b = Matrix::Zero(dims[l + 1], 1);
    layer.gw = Matrix::Zero(dims[l + 1], dims[l]);
    layer.gb = Matrix::Zero(dims[l + 1], 1);
    layers_.push_back(std::move(layer));
  }
}

void Mlp::init(Rng& rng) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = dist(rng);
    for (Eigen::Index r = 0; r < layer.b.rows(); ++r) layer.b(r, 0) = dist(rng);
  }
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != layers_.front().w.cols())
    throw ValidationError("Mlp input width " + std::to_string(x.cols()) +
                          " != expected " + std::to_string(layers_.front().w.cols()));
  if (cache) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
  }
  Matrix cur = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix pre = cur * layer.w.transpose();
    pre.rowwise() += layer.b.col(0).transpose();
    const bool act = (l + 1 < layers_.size()) || activate_last_;
    Matrix post = act ? pre.unaryExpr([](double v) { return softplus(v); }) : pre;
    if (cache) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    cur = std::move(post);
  }
  return cur;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& dout) {
  Matrix cur = dout;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    auto& layer = layers_[li];
    const bool act = (li + 1 < layers_.size()) || activate_last_;
    Matrix dpre = act
        ? (cur.array() * cache.pre[li].unaryExpr([](double v) { return sigmoid(v); }).array())
              .matrix()
        : cur;
    const Matrix& input = li == 0 ? cache.input : cache.post[li - 1];
    layer.gw.noalias() += dpre.transpose() * input;
    layer.gb.col(0) += dpre.colwise().sum().transpose();
    cur.noalias() = dpre * layer.w;
  }
  return cur;
}

void Mlp::collect(const std::string& prefix, std::vector<TensorRef>& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), &layers_[l].w, &layers_[l].gw});
    out.push_back({prefix + ".b" + std::to_string(l), &layers_[l].b, &layers_[l].gb});
  }
}

void Mlp::zero_grad() {
  for (auto& layer : layers_) {
    layer.gw.setZero();
    layer.gb.setZero();
  }
}

}  // namespace dostx
