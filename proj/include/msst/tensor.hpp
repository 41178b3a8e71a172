#pragma once

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// Ops execute eagerly through the kernels layer. When a tape is active
// (see TapeScope) and an input requires gradients, the op records a backward
// closure; backward() replays the tape in reverse and accumulates gradients
// additively into each node's grad buffer.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace msst {

using index_t = std::int64_t;
using shape_t = std::vector<index_t>;

index_t numel(const shape_t& shape);
std::string shape_str(const shape_t& shape);

struct TensorNode {
  shape_t shape;
  std::vector<double> value;
  std::vector<double> grad; // lazily allocated, zero-initialised
  bool requires_grad = false;

  void ensure_grad();
  void zero_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(shape_t shape, bool requires_grad = false);
  Tensor(shape_t shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const shape_t& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  index_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  index_t size() const { return static_cast<index_t>(node_->value.size()); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }

  std::vector<double>& grad();
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;                       // rank-0 / single element
  double at(const std::vector<index_t>& ix) const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Backward closures in forward order; replayed back-to-front.
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }
  void replay_reverse() const;

 private:
  std::vector<std::function<void()>> entries_;
};

// RAII activation of a tape on the current thread. Ops record only while a
// tape is active; plain forward evaluation needs no scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// Seeds grad(loss) = 1 and replays the tape in reverse.
void backward(Tape& tape, const Tensor& loss);

namespace ops {

// a + b / a * b. b's shape must equal a's shape or a trailing suffix of it;
// a suffix broadcasts over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);

// a: [..., p, q], b: [q, r] shared or [..., q, r] with matching leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor reshape(const Tensor& x, shape_t shape);
Tensor concat_last(const std::vector<Tensor>& parts);

// Row-wise softmax over the last axis.
Tensor softmax_rows(const Tensor& x);

// Fused softmax(scale * K Q^T) over rank-3 [B, len, d] inputs -> [B, len, len].
// Row i holds the distribution of key i over all queries.
Tensor attention_scores(const Tensor& k, const Tensor& q, double scale);

// m: [B, rows, cols] times v: [B, cols, d] -> [B, rows, d].
Tensor attention_apply(const Tensor& m, const Tensor& v);

// 1-d convolution along `axis` of a channels-last tensor. w: [k, Ci, Co],
// zero padding keeps the axis length; axis must not be the channel axis.
Tensor dilated_conv_axis(const Tensor& x, const Tensor& w, int axis, index_t dilation);

// Same-length max pooling along `axis` (window centred, -inf padding).
Tensor maxpool_axis(const Tensor& x, int axis, index_t window);

// Normalisation over the channel (last) axis with learnable gain/bias [C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// [B, ..., C] -> [B, C], mean over all interior positions.
Tensor global_average_pool(const Tensor& x);

// Mean negative log-likelihood of labels under softmax(logits). logits: [B, K].
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<index_t>& labels);

Tensor sum_all(const Tensor& x);

} // namespace ops

// Deterministic RNG: explicit 64-bit generator with fixed conversion to
// doubles so sequences are identical across platforms and library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform();                   // [0, 1)
  double uniform(double lo, double hi);
  double normal();                    // standard normal, Box-Muller
  index_t randint(index_t n);         // [0, n)
  std::uint64_t raw() { return gen_(); }

  // Fisher-Yates over indices 0..n-1.
  std::vector<index_t> permutation(index_t n);

  void fill_uniform(Tensor& t, double lo, double hi);
  void fill_normal(Tensor& t, double mean, double stddev);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace msst
