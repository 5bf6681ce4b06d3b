#include "dostx/graph_encoder.hpp"

#include "dostx/errors.hpp"

namespace dostx {

EncoderParams::EncoderParams(int f, int fe, int d, int depth) : width(d) {
  if (depth < 1) throw ValidationError("graph encoder needs at least one layer");
  node_encoder = Mlp({f, d}, true);
  edge_encoder = Mlp({fe, d}, true);
  for (int l = 0; l < depth; ++l)
    layers.push_back({Mlp({3 * d, d, d}, false), Mlp({2 * d, d, d}, false)});
}

void EncoderParams::init(Rng& rng) {
  node_encoder.init(rng);
  edge_encoder.init(rng);
  for (auto& layer : layers) {
    layer.edge_update.init(rng);
    layer.node_update.init(rng);
  }
}

void EncoderParams::collect(std::vector<TensorRef>& out) {
  node_encoder.collect("encoder.node", out);
  edge_encoder.collect("encoder.edge", out);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = "processor.l" + std::to_string(l + 1);
    layers[l].edge_update.collect(base + ".edge", out);
    layers[l].node_update.collect(base + ".node", out);
  }
}

void EncoderParams::zero_grad() {
  node_encoder.zero_grad();
  edge_encoder.zero_grad();
  for (auto& layer : layers) {
    layer.edge_update.zero_grad();
    layer.node_update.zero_grad();
  }
}

void encode_initial(const CrystalGraph& graph, const EncoderParams& params,
                    Matrix& node_states, Matrix& edge_states, EncoderCache* cache) {
  node_states = params.node_encoder.forward(graph.atom_features,
                                            cache ? &cache->node_enc : nullptr);
  if (!graph.edges.empty()) {
    edge_states = params.edge_encoder.forward(graph.edge_features,
                                              cache ? &cache->edge_enc : nullptr);
  } else {
    edge_states = Matrix::Zero(0, params.width);
  }
}

void message_pass(const CrystalGraph& graph, EncoderParams& params, std::size_t layer,
                  Matrix& node_states, Matrix& edge_states, EncoderCache* cache) {
  const int d = params.width;
  const auto n_edges = static_cast<Eigen::Index>(graph.edges.size());
  auto& pl = params.layers[layer];
  EncoderCache::LayerCache local;
  EncoderCache::LayerCache* lc = cache ? &cache->layers[layer] : &local;

  // b'_e = psi_edge([h_src | h_dst | b_e])
  Matrix edge_in(n_edges, 3 * d);
  for (Eigen::Index e = 0; e < n_edges; ++e) {
    edge_in.block(e, 0, 1, d) = node_states.row(graph.edges[e].first);
    edge_in.block(e, d, 1, d) = node_states.row(graph.edges[e].second);
    edge_in.block(e, 2 * d, 1, d) = edge_states.row(e);
  }
  Matrix new_edges = n_edges > 0 ? pl.edge_update.forward(edge_in, &lc->edge)
                                 : Matrix::Zero(0, d);

  // h'_i = psi_node([h_i | sum_{(i,j)} b'_ij]); isolated atoms see a zero sum
  Matrix agg = Matrix::Zero(node_states.rows(), d);
  for (Eigen::Index e = 0; e < n_edges; ++e)
    agg.row(graph.edges[e].first) += new_edges.row(e);
  Matrix node_in(node_states.rows(), 2 * d);
  node_in << node_states, agg;
  node_states = pl.node_update.forward(node_in, &lc->node);
  edge_states = std::move(new_edges);
}

Matrix encode(const CrystalGraph& graph, EncoderParams& params, EncoderCache* cache) {
  if (graph.atom_features.cols() != params.node_encoder.in_dim())
    throw ValidationError("atom feature width != encoder input width");
  if (!graph.edges.empty() && graph.edge_features.cols() != params.edge_encoder.in_dim())
    throw ValidationError("edge feature width != encoder input width");
  if (cache) cache->layers.resize(params.layers.size());
  Matrix h, b;
  encode_initial(graph, params, h, b, cache);
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    message_pass(graph, params, l, h, b, cache);
  if (cache) cache->h = h;
  return h;
}

void encode_backward(const CrystalGraph& graph, EncoderParams& params,
                     const EncoderCache& cache, const Matrix& dh) {
  const int d = params.width;
  const auto n_edges = static_cast<Eigen::Index>(graph.edges.size());
  Matrix dnode = dh;
  Matrix dedge = Matrix::Zero(n_edges, d);

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    auto& pl = params.layers[l];
    const auto& lc = cache.layers[l];

    Matrix dnode_in = pl.node_update.backward(lc.node, dnode);
    Matrix dh_prev = dnode_in.leftCols(d);
    const Matrix dagg = dnode_in.rightCols(d);

    // aggregate backward: each edge message receives its source node's slice
    Matrix dnew_edges = dedge;
    for (Eigen::Index e = 0; e < n_edges; ++e)
      dnew_edges.row(e) += dagg.row(graph.edges[e].first);

    if (n_edges > 0) {
      Matrix dedge_in = pl.edge_update.backward(lc.edge, dnew_edges);
      for (Eigen::Index e = 0; e < n_edges; ++e) {
        dh_prev.row(graph.edges[e].first) += dedge_in.block(e, 0, 1, d);
        dh_prev.row(graph.edges[e].second) += dedge_in.block(e, d, 1, d);
      }
      dedge = dedge_in.rightCols(d);
    }
    dnode = std::move(dh_prev);
  }

  params.node_encoder.backward(cache.node_enc, dnode);
  if (n_edges > 0) params.edge_encoder.backward(cache.edge_enc, dedge);
}

}  // namespace dostx
