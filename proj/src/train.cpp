#include "msst/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "msst/checkpoint.hpp"

namespace msst {

namespace {

constexpr double k_pi = 3.14159265358979323846;

// Distinct noise stream so reordering shuffle draws never shifts the noise.
constexpr std::uint64_t k_noise_salt = 0x9e3779b97f4a7c15ULL;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

index_t argmax_row(const double* row, index_t k) {
  index_t best = 0;
  for (index_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

bool decay_excluded(const std::string& name) {
  return name == "fuse.alpha" || name.find(".norm") != std::string::npos;
}

} // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("train config: epochs must be positive");
  if (warmup_epochs < 1 || warmup_epochs >= epochs)
    throw std::runtime_error("train config: need 1 <= warmup_epochs < epochs, got " +
                             std::to_string(warmup_epochs) + " of " +
                             std::to_string(epochs));
  if (batch_size < 1) throw std::runtime_error("train config: batch_size must be positive");
  if (!(lr_min > 0.0 && lr_min < lr_max))
    throw std::runtime_error("train config: need 0 < lr_min < lr_max");
  if (momentum < 0.0 || weight_decay < 0.0)
    throw std::runtime_error("train config: momentum and weight_decay must be nonnegative");
}

double lr_at(index_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::runtime_error("lr_at: epoch " + std::to_string(epoch) +
                             " outside [0, " + std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs)
    return cfg.lr_max * static_cast<double>(epoch + 1) /
           static_cast<double>(cfg.warmup_epochs);
  const index_t span = cfg.epochs - cfg.warmup_epochs - 1;
  if (span < 1) return cfg.lr_max; // single post-warmup epoch sits at the peak
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) /
                   static_cast<double>(span);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(k_pi * t));
}

void sgd_step(ParameterStore& params, SgdState& state, const TrainConfig& cfg,
              double lr) {
  for (const auto& name : params.names()) {
    Tensor& p = params.get(name);
    auto& node = *p.node();
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(node.value.size(), 0.0);
    if (v.size() != node.value.size())
      throw std::runtime_error("sgd_step: velocity shape drifted for '" + name + "'");
    const bool decay = cfg.weight_decay > 0.0 && !decay_excluded(name);
    const bool has_grad = !node.grad.empty();
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      double g = has_grad ? node.grad[i] : 0.0;
      if (decay) g += cfg.weight_decay * node.value[i];
      v[i] = cfg.momentum * v[i] + g;
      node.value[i] -= lr * (g + cfg.momentum * v[i]);
    }
  }
}

Tensor batch_tensor(const std::vector<SkeletonSequence>& data,
                    const std::vector<index_t>& index) {
  if (index.empty()) throw std::runtime_error("batch_tensor: empty index list");
  const SkeletonSequence& first = data[static_cast<std::size_t>(index.front())];
  Tensor x({static_cast<index_t>(index.size()), first.frames, first.joints,
            first.channels});
  const index_t stride = first.frames * first.joints * first.channels;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const SkeletonSequence& s = data[static_cast<std::size_t>(index[i])];
    if (s.frames != first.frames || s.joints != first.joints ||
        s.channels != first.channels)
      throw std::runtime_error("batch_tensor: sample dims differ within a batch");
    std::copy(s.data.begin(), s.data.end(),
              x.values().begin() + static_cast<std::ptrdiff_t>(i) * stride);
  }
  return x;
}

std::vector<index_t> batch_labels(const std::vector<SkeletonSequence>& data,
                                  const std::vector<index_t>& index) {
  std::vector<index_t> labels(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    labels[i] = data[static_cast<std::size_t>(index[i])].label;
  return labels;
}

EvalResult evaluate(MsstModel& model, const std::vector<SkeletonSequence>& samples,
                    index_t batch_size, AttentionTrace* trace) {
  if (batch_size < 1) throw std::runtime_error("evaluate: batch_size must be positive");
  const index_t n = static_cast<index_t>(samples.size());
  const index_t k = model.config().num_classes;
  EvalResult result;
  result.predictions.resize(static_cast<std::size_t>(n));
  result.scores.resize(static_cast<std::size_t>(n * k));
  index_t correct = 0;
  for (index_t start = 0; start < n; start += batch_size) {
    const index_t count = std::min(batch_size, n - start);
    std::vector<index_t> index(static_cast<std::size_t>(count));
    for (index_t i = 0; i < count; ++i) index[static_cast<std::size_t>(i)] = start + i;
    Tensor x = batch_tensor(samples, index);
    // trace export reflects the first batch only
    Tensor logits = model.forward(x, false, nullptr, start == 0 ? trace : nullptr);
    Tensor probs = ops::softmax_rows(logits);
    for (index_t i = 0; i < count; ++i) {
      const double* row = probs.data() + i * k;
      std::copy(row, row + k, result.scores.begin() + (start + i) * k);
      const index_t pred = argmax_row(row, k);
      result.predictions[static_cast<std::size_t>(start + i)] = pred;
      if (pred == samples[static_cast<std::size_t>(start + i)].label) ++correct;
    }
  }
  result.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return result;
}

TrainResult train_model(MsstModel& model, const std::vector<SkeletonSequence>& train_set,
                        const std::vector<SkeletonSequence>& val_set,
                        const TrainConfig& cfg, const std::string& out_dir,
                        std::ostream* log) {
  cfg.validate();
  if (train_set.empty()) throw std::runtime_error("train_model: empty training set");
  const index_t n = static_cast<index_t>(train_set.size());
  const index_t k = model.config().num_classes;

  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir + "/metrics.jsonl");
    if (!metrics)
      throw std::runtime_error("train_model: cannot open " + out_dir + "/metrics.jsonl");
  }

  Rng shuffle_rng(cfg.seed);
  Rng noise_rng(cfg.seed ^ k_noise_salt);
  SgdState state;
  TrainResult result;

  for (index_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const std::vector<index_t> perm = shuffle_rng.permutation(n);
    double loss_sum = 0.0;
    index_t correct = 0;
    for (index_t start = 0; start < n; start += cfg.batch_size) {
      const index_t count = std::min(cfg.batch_size, n - start);
      const std::vector<index_t> index(perm.begin() + start, perm.begin() + start + count);
      Tensor x = batch_tensor(train_set, index);
      const std::vector<index_t> labels = batch_labels(train_set, index);

      model.params().zero_grads();
      Tape tape;
      Tensor logits, loss;
      {
        TapeScope scope(tape);
        logits = model.forward(x, true, &noise_rng);
        loss = ops::cross_entropy_mean(logits, labels);
      }
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train_model: non-finite loss " + fmt_double(loss_value) +
                                 " at epoch " + std::to_string(epoch) + ", batch offset " +
                                 std::to_string(start));
      backward(tape, loss);
      sgd_step(model.params(), state, cfg, lr);

      loss_sum += loss_value * static_cast<double>(count);
      for (index_t i = 0; i < count; ++i)
        if (argmax_row(logits.data() + i * k, k) == labels[static_cast<std::size_t>(i)])
          ++correct;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = loss_sum / static_cast<double>(n);
    em.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    em.val_acc =
        val_set.empty() ? 0.0 : evaluate(model, val_set, cfg.batch_size).accuracy;
    result.history.push_back(em);

    if (metrics.is_open()) {
      metrics << "{\"epoch\":" << em.epoch << ",\"lr\":" << fmt_double(em.lr)
              << ",\"train_loss\":" << fmt_double(em.train_loss)
              << ",\"train_acc\":" << fmt_double(em.train_acc)
              << ",\"val_acc\":" << fmt_double(em.val_acc) << "}\n";
      metrics.flush();
    }
    if (log)
      *log << "epoch " << em.epoch << " lr " << fmt_double(em.lr) << " loss "
           << fmt_double(em.train_loss) << " train_acc " << fmt_double(em.train_acc)
           << " val_acc " << fmt_double(em.val_acc) << "\n";

    if (em.val_acc > result.best_val_acc || result.best_epoch < 0) {
      result.best_val_acc = em.val_acc;
      result.best_epoch = epoch;
      if (!out_dir.empty()) save_checkpoint(out_dir + "/best.ckpt", model.params());
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir + "/final.ckpt", model.params());
  return result;
}

} // namespace msst
