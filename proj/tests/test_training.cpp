#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dostx/errors.hpp"
#include "dostx/evaluation.hpp"
#include "dostx/training.hpp"

using namespace dostx;

namespace {

ModelConfig small_config(std::uint64_t seed, int m = 11) {
  ModelConfig cfg;
  cfg.f = 4;
  cfg.fe = 16;
  cfg.d = 8;
  cfg.gnn_layers = 2;
  cfg.attn_layers = 2;
  cfg.m = m;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("loss: exact fit and single element") {
  Matrix p(1, 1), t(1, 1);
  p << 1;
  t << 0;
  CHECK(loss(p, p, LossMode::paper_pointwise) == 0.0);
  CHECK(loss(p, p, LossMode::batch_rmse) == 0.0);
  CHECK(loss(p, t, LossMode::paper_pointwise) == 1.0);
  CHECK(loss(p, t, LossMode::batch_rmse) == 1.0);
}

TEST_CASE("loss: the displayed formula is mean absolute deviation") {
  Matrix p(1, 2), t(1, 2);
  p << 0, 0;
  t << 3, 4;
  CHECK(loss(p, t, LossMode::paper_pointwise) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(loss(p, t, LossMode::batch_rmse) ==
        doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
}

TEST_CASE("loss rejects NaN and shape mismatch") {
  Matrix p(1, 2), t(1, 2), t3(1, 3);
  p << 0, 1;
  t << 0, std::nan("");
  CHECK_THROWS_AS(loss(p, t, LossMode::paper_pointwise), NumericalError);
  CHECK_THROWS_AS(loss(p, t3, LossMode::batch_rmse), ValidationError);
}

TEST_CASE("loss_grad: sign convention and rmse gradient") {
  Matrix p(1, 3), t(1, 3);
  p << 1, -2, 0;
  t << 0, 0, 0;
  const Matrix ga = loss_grad(p, t, LossMode::paper_pointwise);
  CHECK(ga(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(ga(0, 1) == doctest::Approx(-1.0 / 3).epsilon(1e-15));
  CHECK(ga(0, 2) == 0.0);  // subgradient at zero

  // finite-difference check of both modes
  for (LossMode mode : {LossMode::paper_pointwise, LossMode::batch_rmse}) {
    const Matrix g = loss_grad(p, t, mode);
    for (int c = 0; c < 3; ++c) {
      Matrix up = p, dn = p;
      up(0, c) += 1e-7;
      dn(0, c) -= 1e-7;
      const double num = (loss(up, t, mode) - loss(dn, t, mode)) / 2e-7;
      CHECK(g(0, c) == doctest::Approx(num).epsilon(1e-5));
    }
  }
  CHECK(loss_grad(t, t, LossMode::batch_rmse).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adamw: fixed point, first step, decay-only geometry") {
  Matrix p(1, 1), g(1, 1);
  TrainConfig cfg;
  cfg.lr = 0.01;

  // zero gradient, zero decay: unchanged
  p << 0.37;
  g << 0.0;
  std::vector<TensorRef> t = {{"p", &p, &g}};
  TrainConfig nodecay = cfg;
  nodecay.weight_decay = 0.0;
  AdamW opt1;
  opt1.step(t, nodecay);
  CHECK(p(0, 0) == 0.37);

  // first step with g=1 moves by ~lr against the gradient
  p << 0.0;
  g << 1.0;
  AdamW opt2;
  opt2.step(t, nodecay);
  CHECK(p(0, 0) == doctest::Approx(-cfg.lr).epsilon(1e-6));

  // decay only: geometric shrink by (1 - lr*wd) per step
  p << 1.0;
  g << 0.0;
  TrainConfig decay = cfg;
  decay.weight_decay = 0.1;
  AdamW opt3;
  for (int k = 0; k < 5; ++k) opt3.step(t, decay);
  CHECK(p(0, 0) == doctest::Approx(std::pow(1.0 - cfg.lr * 0.1, 5)).epsilon(1e-12));
}

TEST_CASE("adamw with lr 0 leaves parameters unchanged") {
  Matrix p = Matrix::Random(3, 2);
  const Matrix orig = p;
  Matrix g = Matrix::Random(3, 2);
  std::vector<TensorRef> t = {{"p", &p, &g}};
  TrainConfig cfg;
  cfg.lr = 0.0;
  AdamW opt;
  opt.step(t, cfg);
  CHECK((p - orig).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adamw flags non-finite gradients with the tensor name") {
  Matrix p(1, 1), g(1, 1);
  p << 0;
  g << std::nan("");
  std::vector<TensorRef> t = {{"decoder.alpha", &p, &g}};
  AdamW opt;
  CHECK_THROWS_WITH_AS(opt.step(t, TrainConfig{}), doctest::Contains("decoder.alpha"),
                       NumericalError);
}

TEST_CASE("alpha gradient sign flips when the pooled vector is negated") {
  const EnergyGrid grid = make_grid(-5, 5, 5);
  CrystalGraph g = generate_synthetic(1, 4, grid).crystals[0];
  ModelConfig cfg = small_config(7, 5);
  cfg.encoder = EncoderKind::mlp;  // h = MLP(X); negating weights negates g_i
  cfg.attn_layers = 0;
  SpectrumModel model(cfg);

  auto alpha_grad = [&]() {
    model.zero_grad();
    SpectrumModel::Cache cache;
    model.forward(g, cache);
    model.backward(g, cache, Vector::Ones(5));
    for (auto& t : model.tensors())
      if (t.name == "decoder.alpha") return (*t.grad)(0, 0);
    return 0.0;
  };

  // force a linear encoder so sign symmetry is exact: zero the second
  // layer bias and compare against alpha = 0 so phi sees +-(alpha*g)
  model.set_alpha(0.0);
  SpectrumModel::Cache cache;
  model.forward(g, cache);
  const Vector pooled = cache.g;
  const double before = alpha_grad();
  // analytic cross-check: d(sum y)/d(alpha) = sum_j phi'(e_j) . g
  CHECK(std::isfinite(before));
  // Negating h flips g_i; with alpha = 0 the decode input is unchanged,
  // so the alpha gradient (sum_j dz_j . g) flips sign exactly.
  for (auto& t : model.tensors()) {
    if (t.name == "encoder.atoms.w1" || t.name == "encoder.atoms.b1") *t.value *= -1.0;
  }
  SpectrumModel::Cache c2;
  model.forward(g, c2);
  CHECK((c2.g + pooled).cwiseAbs().maxCoeff() < 1e-12);
  const double after = alpha_grad();
  CHECK(after == doctest::Approx(-before).epsilon(1e-10));
}

TEST_CASE("fit: reproducible, best epoch consistent, early stopping") {
  const EnergyGrid grid = make_grid(-5, 5, 11);
  Dataset data = generate_synthetic(24, 11, grid);
  prepare(data, SmootherConfig{5, 1});
  SplitSpec spec;
  spec.fractions = {0.75, 0.125, 0.125};
  const SplitResult parts = split(data, spec);

  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 30;
  cfg.patience = 5;
  cfg.seed = 3;

  SpectrumModel m1(small_config(1));
  const FitResult r1 = fit(m1, parts.train, parts.valid, cfg);
  SpectrumModel m2(small_config(1));
  const FitResult r2 = fit(m2, parts.train, parts.valid, cfg);

  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
    CHECK(r1.history[e].valid_loss == r2.history[e].valid_loss);
  }
  auto t1 = m1.tensors();
  auto t2 = m2.tensors();
  for (std::size_t i = 0; i < t1.size(); ++i)
    CHECK((*t1[i].value - *t2[i].value).cwiseAbs().maxCoeff() == 0.0);

  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r1.history) best = std::min(best, e.valid_loss);
  CHECK(r1.best_valid == best);

  // returned model evaluates to exactly the recorded best validation loss
  CHECK(loss(predict_all(m1, parts.valid), targets_of(parts.valid),
             LossMode::paper_pointwise) == r1.best_valid);

  if (r1.history.size() < static_cast<std::size_t>(cfg.max_epochs))
    CHECK(static_cast<int>(r1.history.size()) - 1 - r1.best_epoch == cfg.patience);
}

TEST_CASE("fit rejects empty partitions") {
  const EnergyGrid grid = make_grid(-5, 5, 11);
  const Dataset data = generate_synthetic(4, 0, grid);
  Dataset empty;
  empty.grid = grid;
  SpectrumModel model(small_config(0));
  CHECK_THROWS_AS(fit(model, empty, data, TrainConfig{}), ValidationError);
  CHECK_THROWS_AS(fit(model, data, empty, TrainConfig{}), ValidationError);
}

TEST_CASE("small overfit regression: loss drops below 0.02") {
  const EnergyGrid grid = make_grid(-5, 5, 51);
  Dataset data = generate_synthetic(32, 11, grid);
  prepare(data, SmootherConfig{17, 1});

  ModelConfig mc = small_config(2, 51);
  mc.d = 32;
  mc.alpha_init = 0.2;  // full-strength pooled offset slows the energy channel
  SpectrumModel model(mc);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 32;
  cfg.max_epochs = 3000;
  cfg.patience = 3000;
  cfg.weight_decay = 0.0;
  cfg.seed = 1;
  const FitResult r = fit(model, data, data, cfg);
  CHECK(r.history.back().train_loss < 0.02);
}

TEST_CASE("checkpoint save/load round trip and shape checks") {
  SpectrumModel model(small_config(5));
  save_checkpoint("ckpt_test.json", model.tensors());
  SpectrumModel other(small_config(6));
  load_checkpoint("ckpt_test.json", other.tensors());
  auto t1 = model.tensors();
  auto t2 = other.tensors();
  for (std::size_t i = 0; i < t1.size(); ++i)
    CHECK((*t1[i].value - *t2[i].value).cwiseAbs().maxCoeff() == 0.0);

  ModelConfig wrong = small_config(7);
  wrong.d = 4;
  SpectrumModel bad(wrong);
  CHECK_THROWS_AS(load_checkpoint("ckpt_test.json", bad.tensors()), ValidationError);
  std::remove("ckpt_test.json");
}

TEST_CASE("history csv layout") {
  save_history("hist_test.csv", {{0, 0.5, 0.25}, {1, 0.125, 0.0625}});
  std::ifstream in("hist_test.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,valid_loss");
  std::getline(in, line);
  CHECK(line == "0,0.5,0.25");
  std::remove("hist_test.csv");
}
