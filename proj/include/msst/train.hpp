#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "msst/dataset.hpp"
#include "msst/model.hpp"

namespace msst {

struct TrainConfig {
  index_t epochs = 120;
  index_t warmup_epochs = 5;
  index_t batch_size = 64;
  double lr_max = 0.1;
  double lr_min = 0.0001;
  double momentum = 0.9; // Nesterov
  double weight_decay = 0.0004;
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear warmup to lr_max over the first warmup_epochs, then cosine decay
// to exactly lr_min at the final epoch.
double lr_at(index_t epoch, const TrainConfig& cfg);

struct SgdState {
  std::unordered_map<std::string, std::vector<double>> velocity;
};

// Nesterov step: g = grad + wd*p; v = mu*v + g; p -= lr*(g + mu*v).
// Layer-norm gains/biases and the fusion alpha are excluded from decay.
void sgd_step(ParameterStore& params, SgdState& state, const TrainConfig& cfg,
              double lr);

struct EpochMetrics {
  index_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_val_acc = 0.0;
  index_t best_epoch = -1;
};

// Full training loop. Writes metrics.jsonl, best.ckpt and final.ckpt under
// out_dir when out_dir is nonempty. All samples must already be resized and
// modality-transformed to the model's T/N/C. Aborts on non-finite loss.
TrainResult train_model(MsstModel& model, const std::vector<SkeletonSequence>& train_set,
                        const std::vector<SkeletonSequence>& val_set,
                        const TrainConfig& cfg, const std::string& out_dir,
                        std::ostream* log);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<index_t> predictions;
  std::vector<double> scores; // samples x classes softmax rows
};

// Deterministic inference (noise off); per-sample results are independent of
// how the set is batched.
EvalResult evaluate(MsstModel& model, const std::vector<SkeletonSequence>& samples,
                    index_t batch_size, AttentionTrace* trace = nullptr);

// Assemble [count, T, N, C] input and labels for data[index[i]].
Tensor batch_tensor(const std::vector<SkeletonSequence>& data,
                    const std::vector<index_t>& index);
std::vector<index_t> batch_labels(const std::vector<SkeletonSequence>& data,
                                  const std::vector<index_t>& index);

} // namespace msst
