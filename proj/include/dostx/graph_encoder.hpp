#pragma once

#include <vector>

#include "dostx/crystal.hpp"
#include "dostx/mlp.hpp"

namespace dostx {

// Graph-network crystal encoder: node/edge encoders producing initial
// states, then message-passing layers updating edges from endpoint
// states and nodes from summed incident edge messages.
struct EncoderParams {
  Mlp node_encoder;  // F  -> d, affine + softplus
  Mlp edge_encoder;  // Fe -> d, affine + softplus

  struct ProcessorLayer {
    Mlp edge_update;  // 3d -> d, two-layer
    Mlp node_update;  // 2d -> d, two-layer
  };
  std::vector<ProcessorLayer> layers;
  int width = 0;  // d

  EncoderParams() = default;
  EncoderParams(int f, int fe, int d, int depth);

  void init(Rng& rng);
  void collect(std::vector<TensorRef>& out);
  void zero_grad();
};

struct EncoderCache {
  Mlp::Cache node_enc, edge_enc;
  struct LayerCache {
    Mlp::Cache edge;  // input = [h_src | h_dst | b]
    Mlp::Cache node;  // input = [h | sum of incident messages]
  };
  std::vector<LayerCache> layers;
  Matrix h;  // final atom embeddings, n x d
};

// Initial states: h0 = phi_node(X) and b0 = phi_edge(B), row-wise.
void encode_initial(const CrystalGraph& graph, const EncoderParams& params,
                    Matrix& node_states, Matrix& edge_states,
                    EncoderCache* cache = nullptr);

// One processor layer; `layer` indexes params.layers.
void message_pass(const CrystalGraph& graph, EncoderParams& params, std::size_t layer,
                  Matrix& node_states, Matrix& edge_states,
                  EncoderCache* cache = nullptr);

// Full encoder: initial states threaded through every processor layer.
Matrix encode(const CrystalGraph& graph, EncoderParams& params,
              EncoderCache* cache = nullptr);

// Reverse pass for encode(); dh is d(loss)/d(H). Accumulates into the
// parameter gradient slots.
void encode_backward(const CrystalGraph& graph, EncoderParams& params,
                     const EncoderCache& cache, const Matrix& dh);

}  // namespace dostx
