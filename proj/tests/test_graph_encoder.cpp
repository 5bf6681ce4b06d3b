#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dostx/crystal.hpp"
#include "dostx/errors.hpp"
#include "dostx/graph_encoder.hpp"
#include "gradcheck.hpp"

using namespace dostx;

namespace {

CrystalGraph path_graph(int n, int f, int fe, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  CrystalGraph g;
  g.id = "g";
  g.atom_species.assign(static_cast<std::size_t>(n), 0);
  g.atom_features.resize(n, f);
  for (Eigen::Index r = 0; r < n; ++r)
    for (int c = 0; c < f; ++c) g.atom_features(r, c) = dist(rng);
  for (int i = 0; i + 1 < n; ++i) {
    g.edges.emplace_back(i, i + 1);
    g.edges.emplace_back(i + 1, i);
  }
  g.edge_features.resize(static_cast<Eigen::Index>(g.edges.size()), fe);
  for (Eigen::Index r = 0; r < g.edge_features.rows(); ++r)
    for (int c = 0; c < fe; ++c) g.edge_features(r, c) = dist(rng);
  g.n_species_kinds = 1;
  return g;
}

CrystalGraph permute_atoms(const CrystalGraph& g, const std::vector<int>& perm) {
  // perm[i] = new index of old atom i
  CrystalGraph out = g;
  const int n = g.n_atoms();
  for (int i = 0; i < n; ++i) {
    out.atom_species[static_cast<std::size_t>(perm[i])] = g.atom_species[static_cast<std::size_t>(i)];
    out.atom_features.row(perm[i]) = g.atom_features.row(i);
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    out.edges[e] = {perm[static_cast<std::size_t>(g.edges[e].first)],
                    perm[static_cast<std::size_t>(g.edges[e].second)]};
  return out;
}

// Plain loop-based oracle for one layer of each update equation.
void encoder_oracle(const CrystalGraph& g, EncoderParams& params, Matrix& h_out) {
  auto mlp_apply = [](const Mlp& net, const Vector& x) {
    return net.forward(x.transpose()).row(0).transpose().eval();
  };
  const int n = g.n_atoms();
  const int d = params.width;
  std::vector<Vector> h(static_cast<std::size_t>(n)), b(g.edges.size());
  for (int i = 0; i < n; ++i)
    h[static_cast<std::size_t>(i)] =
        mlp_apply(params.node_encoder, g.atom_features.row(i).transpose());
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    b[e] = mlp_apply(params.edge_encoder,
                     g.edge_features.row(static_cast<Eigen::Index>(e)).transpose());
  for (auto& layer : params.layers) {
    std::vector<Vector> nb(g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      Vector in(3 * d);
      in << h[static_cast<std::size_t>(g.edges[e].first)],
          h[static_cast<std::size_t>(g.edges[e].second)], b[e];
      nb[e] = mlp_apply(layer.edge_update, in);
    }
    std::vector<Vector> nh(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Vector agg = Vector::Zero(d);
      for (std::size_t e = 0; e < g.edges.size(); ++e)
        if (g.edges[e].first == i) agg += nb[e];
      Vector in(2 * d);
      in << h[static_cast<std::size_t>(i)], agg;
      nh[static_cast<std::size_t>(i)] = mlp_apply(layer.node_update, in);
    }
    h = std::move(nh);
    b = std::move(nb);
  }
  h_out.resize(n, d);
  for (int i = 0; i < n; ++i) h_out.row(i) = h[static_cast<std::size_t>(i)].transpose();
}

}  // namespace

TEST_CASE("encode_initial: zero params give zero pre-activation states") {
  // softplus(0) = log 2, so zero params yield a constant matrix
  const CrystalGraph g = path_graph(3, 2, 2, 0);
  EncoderParams params(2, 2, 4, 1);  // not initialized: all zeros
  Matrix h, b;
  encode_initial(g, params, h, b);
  CHECK((h.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
  CHECK((b.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
}

TEST_CASE("encode_initial matches a row-wise oracle") {
  const CrystalGraph g = path_graph(3, 2, 3, 1);
  EncoderParams params(2, 3, 4, 1);
  Rng rng(5);
  params.init(rng);
  Matrix h, b;
  encode_initial(g, params, h, b);
  for (int i = 0; i < 3; ++i) {
    const Vector want = params.node_encoder
                            .forward(g.atom_features.row(i))
                            .row(0)
                            .transpose();
    CHECK((h.row(i).transpose() - want).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(b.rows() == 4);
}

TEST_CASE("encode_initial rejects width mismatch") {
  const CrystalGraph g = path_graph(3, 2, 3, 1);
  EncoderParams params(5, 3, 4, 1);
  CHECK_THROWS_AS(encode(g, params), ValidationError);
}

TEST_CASE("message_pass: isolated atom sees a zero aggregate") {
  CrystalGraph g;
  g.id = "single";
  g.atom_species = {0};
  g.atom_features = Matrix::Random(1, 2);
  g.n_species_kinds = 1;
  EncoderParams params(2, 2, 4, 1);
  Rng rng(9);
  params.init(rng);

  const Matrix h = encode(g, params);
  // oracle: h' = psi_node([phi_node(x) | 0])
  const Vector h0 = params.node_encoder.forward(g.atom_features).row(0).transpose();
  Vector in(8);
  in << h0, Vector::Zero(4);
  const Vector want = params.layers[0].node_update.forward(in.transpose()).row(0).transpose();
  CHECK((h.row(0).transpose() - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("message_pass: symmetric pair with identical states stays identical") {
  CrystalGraph g = path_graph(2, 2, 2, 3);
  g.atom_features.row(1) = g.atom_features.row(0);
  g.edge_features.row(1) = g.edge_features.row(0);
  EncoderParams params(2, 2, 4, 2);
  Rng rng(11);
  params.init(rng);
  const Matrix h = encode(g, params);
  CHECK((h.row(0) - h.row(1)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("encode matches the literal two-equation oracle") {
  for (unsigned seed = 0; seed < 3; ++seed) {
    const CrystalGraph g = path_graph(3, 2, 3, seed);
    EncoderParams params(2, 3, 5, 2);
    Rng rng(seed + 100);
    params.init(rng);
    const Matrix h = encode(g, params);
    Matrix want;
    encoder_oracle(g, params, want);
    CHECK((h - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("encode is permutation equivariant") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const CrystalGraph g = path_graph(5, 3, 2, static_cast<unsigned>(trial));
    EncoderParams params(3, 2, 6, 3);
    Rng prng(static_cast<std::uint64_t>(trial) + 50);
    params.init(prng);

    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    const Matrix h = encode(g, params);
    const Matrix hp = encode(permute_atoms(g, perm), params);
    for (int i = 0; i < 5; ++i)
      CHECK((hp.row(perm[static_cast<std::size_t>(i)]) - h.row(i)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("encoder gradients match central finite differences") {
  const CrystalGraph g = path_graph(3, 2, 2, 4);
  EncoderParams params(2, 2, 4, 2);
  Rng rng(13);
  params.init(rng);

  // scalar objective: sum of squares of H
  auto loss_fn = [&]() {
    CrystalGraph gc = g;
    return encode(gc, params).array().square().sum();
  };

  params.zero_grad();
  EncoderCache cache;
  const Matrix h = encode(g, params, &cache);
  encode_backward(g, params, cache, 2.0 * h);

  std::vector<TensorRef> tensors;
  params.collect(tensors);
  const auto failures = dostx::testing::check_gradients(tensors, loss_fn);
  CHECK(failures.empty());
}
