#include "dostx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dostx/errors.hpp"

namespace dostx {

Metrics metrics(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("metrics: shape mismatch");
  if (pred.rows() == 0) throw ValidationError("metrics: empty input");
  Metrics m;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const auto r = (pred.row(i) - target.row(i)).eval();
    m.rmse += std::sqrt(r.array().square().mean());
    m.mae += r.cwiseAbs().mean();
  }
  m.rmse /= static_cast<double>(pred.rows());
  m.mae /= static_cast<double>(pred.rows());
  return m;
}

std::map<std::string, Metrics> family_breakdown(const Dataset& data, const Matrix& pred,
                                                FamilyKey key) {
  if (pred.rows() != static_cast<Eigen::Index>(data.size()))
    throw ValidationError("family_breakdown: prediction row count != dataset size");
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& c = data.crystals[i];
    std::string label = key == FamilyKey::species_count
                            ? std::to_string(c.n_species_kinds) + "-species"
                            : to_string(c.crystal_system);
    groups[label].push_back(static_cast<Eigen::Index>(i));
  }
  std::map<std::string, Metrics> out;
  for (const auto& [label, idx] : groups) {
    Matrix p(static_cast<Eigen::Index>(idx.size()), pred.cols());
    Matrix t(static_cast<Eigen::Index>(idx.size()), pred.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      p.row(static_cast<Eigen::Index>(k)) = pred.row(idx[k]);
      t.row(static_cast<Eigen::Index>(k)) = data.crystals[static_cast<std::size_t>(idx[k])].dos.transpose();
    }
    out[label] = metrics(p, t);
  }
  return out;
}

Vector fermi_predict(const FermiProbe& probe, const Matrix& dos) {
  return probe.net.forward(dos).col(0);
}

FermiProbe fermi_probe_train(const Matrix& dos_true, const Vector& fermi,
                             const ProbeConfig& cfg) {
  if (dos_true.rows() != fermi.size())
    throw ValidationError("fermi probe: target count mismatch");
  if (dos_true.rows() < 2) throw ValidationError("fermi probe: need at least 2 samples");

  const int m = static_cast<int>(dos_true.cols());
  FermiProbe probe;
  probe.net = Mlp({m, cfg.hidden, cfg.hidden, cfg.hidden, 1}, false);
  Rng init_rng(cfg.train.seed);
  probe.net.init(init_rng);

  // internal 90/10 holdout drives the early stopping
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(dos_true.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(cfg.train.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_valid = std::max<std::size_t>(1, idx.size() / 10);
  const auto n_train = idx.size() - n_valid;

  auto slice = [&](std::size_t lo, std::size_t hi, Matrix& x, Matrix& y) {
    x.resize(static_cast<Eigen::Index>(hi - lo), m);
    y.resize(static_cast<Eigen::Index>(hi - lo), 1);
    for (std::size_t k = lo; k < hi; ++k) {
      x.row(static_cast<Eigen::Index>(k - lo)) = dos_true.row(idx[k]);
      y(static_cast<Eigen::Index>(k - lo), 0) = fermi[idx[k]];
    }
  };
  Matrix xtr, ytr, xva, yva;
  slice(0, n_train, xtr, ytr);
  slice(n_train, idx.size(), xva, yva);

  std::vector<TensorRef> tensors;
  probe.net.collect("probe", tensors);
  AdamW opt;
  std::vector<Matrix> best;
  double best_valid = 0.0;
  int best_epoch = -1, stale = 0;
  std::vector<std::size_t> order(static_cast<std::size_t>(xtr.rows()));
  std::iota(order.begin(), order.end(), 0u);

  for (int epoch = 0; epoch < cfg.train.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.train.batch_size)) {
      const auto nb = std::min<std::size_t>(cfg.train.batch_size, order.size() - start);
      Matrix xb(static_cast<Eigen::Index>(nb), m), yb(static_cast<Eigen::Index>(nb), 1);
      for (std::size_t k = 0; k < nb; ++k) {
        xb.row(static_cast<Eigen::Index>(k)) = xtr.row(static_cast<Eigen::Index>(order[start + k]));
        yb.row(static_cast<Eigen::Index>(k)) = ytr.row(static_cast<Eigen::Index>(order[start + k]));
      }
      probe.net.zero_grad();
      Mlp::Cache cache;
      const Matrix pred = probe.net.forward(xb, &cache);
      probe.net.backward(cache, loss_grad(pred, yb, LossMode::batch_rmse));
      opt.step(tensors, cfg.train);
    }
    const double valid = loss(probe.net.forward(xva), yva, LossMode::batch_rmse);
    if (best_epoch < 0 || valid < best_valid) {
      best_epoch = epoch;
      best_valid = valid;
      best.clear();
      for (const auto& t : tensors) best.push_back(*t.value);
      stale = 0;
    } else if (++stale >= cfg.train.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) *tensors[i].value = best[i];
  return probe;
}

double fermi_eval(const FermiProbe& probe, const Matrix& dos_pred,
                  const Vector& fermi_true) {
  if (dos_pred.rows() != fermi_true.size())
    throw ValidationError("fermi_eval: target count mismatch");
  const Vector pred = fermi_predict(probe, dos_pred);
  return std::sqrt((pred - fermi_true).array().square().mean());
}

Matrix predict_all(SpectrumModel& model, const Dataset& data) {
  Matrix pred(static_cast<Eigen::Index>(data.size()), data.grid.m);
  for (std::size_t i = 0; i < data.size(); ++i)
    pred.row(static_cast<Eigen::Index>(i)) = model.predict(data.crystals[i]).transpose();
  return pred;
}

Matrix targets_of(const Dataset& data) {
  Matrix t(static_cast<Eigen::Index>(data.size()), data.grid.m);
  for (std::size_t i = 0; i < data.size(); ++i)
    t.row(static_cast<Eigen::Index>(i)) = data.crystals[i].dos.transpose();
  return t;
}

Vector fermi_targets_of(const Dataset& data) {
  Vector f(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.crystals[i].fermi_target)
      throw ValidationError("crystal " + data.crystals[i].id + " lacks fermi_target");
    f[static_cast<Eigen::Index>(i)] = *data.crystals[i].fermi_target;
  }
  return f;
}

}  // namespace dostx
