#include "dostx/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "dostx/errors.hpp"

namespace dostx {

double loss(const Matrix& pred, const Matrix& target, LossMode mode) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("loss: shape mismatch");
  if (!pred.allFinite() || !target.allFinite())
    throw NumericalError("loss: non-finite input");
  const Matrix r = pred - target;
  if (mode == LossMode::paper_pointwise) return r.cwiseAbs().mean();
  return std::sqrt(r.array().square().mean());
}

Matrix loss_grad(const Matrix& pred, const Matrix& target, LossMode mode) {
  const Matrix r = pred - target;
  const double nm = static_cast<double>(r.size());
  if (mode == LossMode::paper_pointwise) {
    return r.unaryExpr([](double v) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; }) / nm;
  }
  const double l = std::sqrt(r.array().square().mean());
  if (l == 0.0) return Matrix::Zero(r.rows(), r.cols());
  return r / (nm * l);
}

void AdamW::step(std::vector<TensorRef>& tensors, const TrainConfig& cfg) {
  if (m_.empty()) {
    for (const auto& t : tensors) {
      m_.push_back(Matrix::Zero(t.value->rows(), t.value->cols()));
      v_.push_back(Matrix::Zero(t.value->rows(), t.value->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Matrix& g = *tensors[i].grad;
    if (!g.allFinite())
      throw NumericalError("non-finite gradient in tensor " + tensors[i].name);
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g.array().square().matrix();
    Matrix& p = *tensors[i].value;
    p -= cfg.lr * cfg.weight_decay * p;
    p.array() -= cfg.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg.eps);
  }
}

namespace {

double dataset_loss(SpectrumModel& model, const Dataset& data, LossMode mode) {
  const int m = data.grid.m;
  Matrix pred(static_cast<Eigen::Index>(data.size()), m);
  Matrix target(static_cast<Eigen::Index>(data.size()), m);
  for (std::size_t i = 0; i < data.size(); ++i) {
    pred.row(static_cast<Eigen::Index>(i)) = model.predict(data.crystals[i]).transpose();
    target.row(static_cast<Eigen::Index>(i)) = data.crystals[i].dos.transpose();
  }
  return loss(pred, target, mode);
}

}  // namespace

FitResult fit(SpectrumModel& model, const Dataset& train, const Dataset& valid,
              const TrainConfig& cfg) {
  if (train.crystals.empty() || valid.crystals.empty())
    throw ValidationError("fit: empty train or valid set");
  if (cfg.lr <= 0 || cfg.batch_size < 1 || cfg.patience < 1)
    throw ValidationError("fit: invalid training config");

  auto tensors = model.tensors();
  AdamW opt;
  std::mt19937_64 shuffle_rng(cfg.seed);
  const int m = train.grid.m;

  FitResult result;
  std::vector<Matrix> best_params;
  int stale = 0;
  bool stop = false;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0u);

  for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t nb =
          std::min<std::size_t>(cfg.batch_size, order.size() - start);
      model.zero_grad();
      Matrix pred(static_cast<Eigen::Index>(nb), m);
      Matrix target(static_cast<Eigen::Index>(nb), m);
      std::vector<SpectrumModel::Cache> caches(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        const auto& g = train.crystals[order[start + k]];
        pred.row(static_cast<Eigen::Index>(k)) = model.forward(g, caches[k]).transpose();
        target.row(static_cast<Eigen::Index>(k)) = g.dos.transpose();
      }
      epoch_loss += loss(pred, target, cfg.loss_mode);
      const Matrix dpred = loss_grad(pred, target, cfg.loss_mode);
      for (std::size_t k = 0; k < nb; ++k)
        model.backward(train.crystals[order[start + k]], caches[k],
                       dpred.row(static_cast<Eigen::Index>(k)).transpose());
      opt.step(tensors, cfg);
      ++n_batches;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    const double train_loss = epoch_loss / n_batches;
    const double valid_loss = dataset_loss(model, valid, cfg.loss_mode);
    result.history.push_back({epoch, train_loss, valid_loss});

    if (result.best_epoch < 0 || valid_loss < result.best_valid) {
      result.best_epoch = epoch;
      result.best_valid = valid_loss;
      best_params.clear();
      for (const auto& t : tensors) best_params.push_back(*t.value);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      stop = true;
    }
  }

  for (std::size_t i = 0; i < best_params.size(); ++i) *tensors[i].value = best_params[i];
  return result;
}

void save_checkpoint(const std::string& path, std::vector<TensorRef> tensors) {
  nlohmann::json j;
  for (const auto& t : tensors) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.value->size()));
    for (Eigen::Index r = 0; r < t.value->rows(); ++r)
      for (Eigen::Index c = 0; c < t.value->cols(); ++c) data.push_back((*t.value)(r, c));
    j[t.name] = {{"shape", {t.value->rows(), t.value->cols()}}, {"data", data}};
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write checkpoint " + path);
  out << j.dump() << "\n";
}

void load_checkpoint(const std::string& path, std::vector<TensorRef> tensors) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  nlohmann::json j;
  in >> j;
  for (auto& t : tensors) {
    if (!j.contains(t.name))
      throw ValidationError("checkpoint missing tensor " + t.name);
    const auto& entry = j[t.name];
    const auto rows = entry["shape"][0].get<Eigen::Index>();
    const auto cols = entry["shape"][1].get<Eigen::Index>();
    if (rows != t.value->rows() || cols != t.value->cols())
      throw ValidationError("checkpoint shape mismatch for " + t.name);
    const auto data = entry["data"].get<std::vector<double>>();
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) (*t.value)(r, c) = data[k++];
  }
}

void save_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write history " + path);
  out << "epoch,train_loss,valid_loss\n";
  char buf[96];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.valid_loss);
    out << buf;
  }
}

}  // namespace dostx
