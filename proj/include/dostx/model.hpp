#pragma once

#include <string>
#include <vector>

#include "dostx/crystal.hpp"
#include "dostx/graph_encoder.hpp"
#include "dostx/mlp.hpp"

namespace dostx {

// Single-head, projection-free cross-attention:
//   Softmax(e_prev * h^T / sqrt(d)) * h
Matrix cross_attention_layer(const Matrix& e_prev, const Matrix& h,
                             Matrix* weights_out = nullptr);

// L stacked cross-attention layers threading the output as the next query.
Matrix refine(const Matrix& e0, const Matrix& h, int layers);

// Sum pooling over atom embedding rows.
Vector pool_crystal(const Matrix& h);

// Per-energy decoder head: phi(e_j + alpha * g) for every grid row j.
Vector decode(const Matrix& e_final, const Vector& g, const Mlp& head, double alpha);

enum class EncoderKind { mlp, graph_network };
enum class HeadKind { direct, energy };

struct ModelConfig {
  EncoderKind encoder = EncoderKind::graph_network;
  HeadKind head = HeadKind::energy;
  int f = 4;           // atom feature width
  int fe = 16;         // edge feature width
  int d = 256;         // hidden dim
  int gnn_layers = 3;  // message-passing depth L'
  int attn_layers = 2; // cross-attention depth L; 0 = raw energy bank
  int m = 201;         // energy grid points
  int head_hidden = 0;  // decoder hidden width; 0 = use d
  double alpha_init = 1.0;
  std::uint64_t seed = 0;
};

// Decoder hidden width (head_hidden if set, else d).
int head_hidden(const ModelConfig& cfg);

ModelConfig parse_model_kind(const std::string& model, const std::string& energy,
                             ModelConfig base);

// Closed-form trainable-parameter count for a configuration.
std::size_t count_params(const ModelConfig& cfg);

// One model family covers DOSTransformer and the four baselines:
// encoder in {per-atom MLP, graph network}, head in {direct spectrum
// MLP, energy-embedding decoder}, attention depth L >= 0. DOSTransformer
// is (graph_network, energy, L >= 1); the energy-embedding graph-network
// baseline is the identical computation with L = 0.
class SpectrumModel {
 public:
  struct Cache {
    EncoderCache enc;
    Mlp::Cache atom_mlp;
    Matrix h;  // n x d atom embeddings
    struct AttnLayer {
      Matrix e_prev;   // query into the layer
      Matrix weights;  // M x n softmax rows
    };
    std::vector<AttnLayer> attn;
    Matrix e_final;
    Vector g;
    Mlp::Cache head;
    Matrix head_in;
  };

  SpectrumModel() = default;
  explicit SpectrumModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  Vector forward(const CrystalGraph& graph, Cache& cache);
  Vector predict(const CrystalGraph& graph);

  // dy is d(loss)/d(prediction); accumulates into gradient slots.
  void backward(const CrystalGraph& graph, const Cache& cache, const Vector& dy);

  std::vector<TensorRef> tensors();
  void zero_grad();

  double alpha() const { return alpha_(0, 0); }
  void set_alpha(double a) { alpha_(0, 0) = a; }
  Matrix& energy_bank() { return bank_; }

 private:
  ModelConfig cfg_;
  EncoderParams encoder_;  // graph_network
  Mlp atom_mlp_;           // mlp encoder: F -> d -> d
  Mlp head_;               // energy: d -> d -> 1; direct: d -> d -> M
  Matrix bank_, bank_grad_;    // M x d energy embeddings (energy head)
  Matrix alpha_, alpha_grad_;  // 1 x 1 blend scalar (energy head)
};

}  // namespace dostx
