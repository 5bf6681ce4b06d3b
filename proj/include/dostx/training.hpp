#pragma once

#include <string>
#include <vector>

#include "dostx/crystal.hpp"
#include "dostx/model.hpp"

namespace dostx {

// The displayed training loss sums sqrt((y_hat - y)^2), i.e. the mean
// absolute deviation. batch_rmse is the conventional reading; the
// literal formula is the default.
enum class LossMode { paper_pointwise, batch_rmse };

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;
  int max_epochs = 1000;
  int patience = 50;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::paper_pointwise;
  long max_steps = -1;  // optional hard cap on optimizer steps
};

double loss(const Matrix& pred, const Matrix& target, LossMode mode);
// d(loss)/d(pred); paper_pointwise uses sign with subgradient 0 at 0.
Matrix loss_grad(const Matrix& pred, const Matrix& target, LossMode mode);

// Decoupled weight decay: p -= lr*wd*p + lr * mhat / (sqrt(vhat) + eps).
class AdamW {
 public:
  void step(std::vector<TensorRef>& tensors, const TrainConfig& cfg);
  long t() const { return t_; }

 private:
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

struct EpochStats {
  int epoch;
  double train_loss;
  double valid_loss;
};

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_valid = 0.0;
  long steps = 0;
};

// Mini-batch AdamW loop with seeded shuffling and patience-based early
// stopping; the model is left holding the best-validation parameters.
FitResult fit(SpectrumModel& model, const Dataset& train, const Dataset& valid,
              const TrainConfig& cfg);

void save_checkpoint(const std::string& path, std::vector<TensorRef> tensors);
void load_checkpoint(const std::string& path, std::vector<TensorRef> tensors);

void save_history(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace dostx
