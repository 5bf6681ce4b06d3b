#include "dostx/model.hpp"

#include <cmath>

#include "dostx/errors.hpp"

namespace dostx {

Matrix cross_attention_layer(const Matrix& e_prev, const Matrix& h, Matrix* weights_out) {
  if (e_prev.cols() != h.cols()) throw ValidationError("attention width mismatch");
  if (h.rows() < 1) throw ValidationError("attention requires at least one atom");
  const double scale = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  Matrix scores = e_prev * h.transpose() * scale;  // M x n
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - mx).exp();
    scores.row(r) /= scores.row(r).sum();
  }
  if (weights_out) *weights_out = scores;
  return scores * h;
}

Matrix refine(const Matrix& e0, const Matrix& h, int layers) {
  Matrix e = e0;
  for (int l = 0; l < layers; ++l) e = cross_attention_layer(e, h);
  return e;
}

Vector pool_crystal(const Matrix& h) {
  if (h.rows() < 1) throw ValidationError("pool over empty embedding matrix");
  return h.colwise().sum().transpose();
}

Vector decode(const Matrix& e_final, const Vector& g, const Mlp& head, double alpha) {
  if (e_final.cols() != g.size()) throw ValidationError("decode width mismatch");
  Matrix z = e_final;
  z.rowwise() += alpha * g.transpose();
  return head.forward(z).col(0);
}

ModelConfig parse_model_kind(const std::string& model, const std::string& energy,
                             ModelConfig base) {
  if (model == "mlp") {
    base.encoder = EncoderKind::mlp;
  } else if (model == "gn") {
    base.encoder = EncoderKind::graph_network;
  } else if (model == "dostransformer") {
    base.encoder = EncoderKind::graph_network;
  } else {
    throw ValidationError("unknown model kind '" + model + "'");
  }
  if (energy == "on") {
    base.head = HeadKind::energy;
  } else if (energy == "off") {
    base.head = HeadKind::direct;
  } else {
    throw ValidationError("energy flag must be 'on' or 'off'");
  }
  if (model != "dostransformer") base.attn_layers = 0;
  if (model == "dostransformer" && base.head != HeadKind::energy)
    throw ValidationError("dostransformer requires --energy on");
  return base;
}

namespace {

std::size_t affine_params(int in, int out) {
  return static_cast<std::size_t>(in) * out + out;
}

}  // namespace

int head_hidden(const ModelConfig& cfg) {
  return cfg.head_hidden > 0 ? cfg.head_hidden : cfg.d;
}

std::size_t count_params(const ModelConfig& cfg) {
  const int d = cfg.d;
  const int hh = head_hidden(cfg);
  std::size_t total = 0;
  if (cfg.encoder == EncoderKind::graph_network) {
    total += affine_params(cfg.f, d) + affine_params(cfg.fe, d);
    total += static_cast<std::size_t>(cfg.gnn_layers) *
             (affine_params(3 * d, d) + affine_params(d, d) +  // edge update
              affine_params(2 * d, d) + affine_params(d, d));  // node update
  } else {
    total += affine_params(cfg.f, d) + affine_params(d, d);
  }
  if (cfg.head == HeadKind::energy) {
    total += static_cast<std::size_t>(cfg.m) * d;             // bank
    total += affine_params(d, hh) + affine_params(hh, 1) + 1;  // phi + alpha
  } else {
    total += affine_params(d, hh) + affine_params(hh, cfg.m);
  }
  return total;
}

SpectrumModel::SpectrumModel(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.seed);
  if (cfg.encoder == EncoderKind::graph_network) {
    encoder_ = EncoderParams(cfg.f, cfg.fe, cfg.d, cfg.gnn_layers);
    encoder_.init(rng);
  } else {
    atom_mlp_ = Mlp({cfg.f, cfg.d, cfg.d}, false);
    atom_mlp_.init(rng);
  }
  if (cfg.head == HeadKind::energy) {
    head_ = Mlp({cfg.d, head_hidden(cfg), 1}, false);
    head_.init(rng);
    bank_ = Matrix(cfg.m, cfg.d);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (Eigen::Index r = 0; r < bank_.rows(); ++r)
      for (Eigen::Index c = 0; c < bank_.cols(); ++c) bank_(r, c) = normal(rng);
    bank_grad_ = Matrix::Zero(cfg.m, cfg.d);
    alpha_ = Matrix::Constant(1, 1, cfg.alpha_init);
    alpha_grad_ = Matrix::Zero(1, 1);
  } else {
    head_ = Mlp({cfg.d, head_hidden(cfg), cfg.m}, false);
    head_.init(rng);
  }
}

Vector SpectrumModel::forward(const CrystalGraph& graph, Cache& cache) {
  if (cfg_.encoder == EncoderKind::graph_network) {
    cache.h = encode(graph, encoder_, &cache.enc);
  } else {
    cache.h = atom_mlp_.forward(graph.atom_features, &cache.atom_mlp);
  }
  cache.g = pool_crystal(cache.h);

  if (cfg_.head == HeadKind::direct) {
    cache.head_in = cache.g.transpose();  // 1 x d
    Matrix out = head_.forward(cache.head_in, &cache.head);
    return out.transpose();
  }

  cache.attn.resize(static_cast<std::size_t>(cfg_.attn_layers));
  Matrix e = bank_;
  for (int l = 0; l < cfg_.attn_layers; ++l) {
    auto& al = cache.attn[static_cast<std::size_t>(l)];
    al.e_prev = e;
    e = cross_attention_layer(e, cache.h, &al.weights);
  }
  cache.e_final = e;

  cache.head_in = e;
  cache.head_in.rowwise() += alpha_(0, 0) * cache.g.transpose();
  Matrix out = head_.forward(cache.head_in, &cache.head);  // M x 1
  return out.col(0);
}

Vector SpectrumModel::predict(const CrystalGraph& graph) {
  Cache cache;
  return forward(graph, cache);
}

void SpectrumModel::backward(const CrystalGraph& graph, const Cache& cache,
                             const Vector& dy) {
  if (!dy.allFinite()) throw NumericalError("backward: non-finite upstream gradient");
  Matrix dh;  // d(loss)/d(atom embeddings)
  Vector dg = Vector::Zero(cfg_.d);

  if (cfg_.head == HeadKind::direct) {
    Matrix dout = dy.transpose();  // 1 x M
    dg += head_.backward(cache.head, dout).row(0).transpose();
    dh = Matrix::Zero(cache.h.rows(), cfg_.d);
  } else {
    Matrix dz = head_.backward(cache.head, Matrix(dy));  // M x d
    alpha_grad_(0, 0) += (dz * cache.g).sum();
    dg += alpha_(0, 0) * dz.colwise().sum().transpose();

    // back through the attention stack
    Matrix de = dz;  // d(loss)/d(e_final)
    dh = Matrix::Zero(cache.h.rows(), cfg_.d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
    for (int l = cfg_.attn_layers; l-- > 0;) {
      const auto& al = cache.attn[static_cast<std::size_t>(l)];
      const Matrix& w = al.weights;
      Matrix dw = de * cache.h.transpose();          // M x n
      dh.noalias() += w.transpose() * de;
      Matrix ds(w.rows(), w.cols());
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        const double rowdot = dw.row(r).dot(w.row(r));
        ds.row(r) = w.row(r).array() * (dw.row(r).array() - rowdot);
      }
      dh.noalias() += ds.transpose() * al.e_prev * scale;
      de = ds * cache.h * scale;
    }
    bank_grad_ += de;
  }

  dh.rowwise() += dg.transpose();  // pool backward

  if (cfg_.encoder == EncoderKind::graph_network) {
    encode_backward(graph, encoder_, cache.enc, dh);
  } else {
    atom_mlp_.backward(cache.atom_mlp, dh);
  }
}

std::vector<TensorRef> SpectrumModel::tensors() {
  std::vector<TensorRef> out;
  if (cfg_.encoder == EncoderKind::graph_network) {
    encoder_.collect(out);
  } else {
    atom_mlp_.collect("encoder.atoms", out);
  }
  if (cfg_.head == HeadKind::energy) {
    out.push_back({"energy.bank", &bank_, &bank_grad_});
    head_.collect("decoder.head", out);
    out.push_back({"decoder.alpha", &alpha_, &alpha_grad_});
  } else {
    head_.collect("head.direct", out);
  }
  return out;
}

void SpectrumModel::zero_grad() {
  for (auto& t : tensors()) t.grad->setZero();
}

}  // namespace dostx
