#include "msst/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "msst/kernels.hpp"

namespace msst {

index_t numel(const shape_t& shape) {
  index_t n = 1;
  for (index_t d : shape) n *= d;
  return n;
}

std::string shape_str(const shape_t& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void TensorNode::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

Tensor::Tensor(shape_t shape, bool requires_grad) {
  for (index_t d : shape)
    if (d <= 0) throw std::runtime_error("tensor dims must be positive, got " + shape_str(shape));
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->value.assign(static_cast<std::size_t>(numel(node_->shape)), 0.0);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(shape_t shape, std::vector<double> values, bool requires_grad)
    : Tensor(std::move(shape), requires_grad) {
  if (static_cast<index_t>(values.size()) != size())
    throw std::runtime_error("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(node_->shape));
  node_->value = std::move(values);
}

std::vector<double>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1)
    throw std::runtime_error("item() on tensor of size " + std::to_string(size()));
  return node_->value[0];
}

double Tensor::at(const std::vector<index_t>& ix) const {
  if (static_cast<int>(ix.size()) != rank())
    throw std::runtime_error("index rank mismatch for shape " + shape_str(node_->shape));
  index_t off = 0;
  for (std::size_t i = 0; i < ix.size(); ++i) {
    if (ix[i] < 0 || ix[i] >= node_->shape[i])
      throw std::runtime_error("index out of range for shape " + shape_str(node_->shape));
    off = off * node_->shape[i] + ix[i];
  }
  return node_->value[static_cast<std::size_t>(off)];
}

void Tape::replay_reverse() const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

void backward(Tape& tape, const Tensor& loss) {
  if (loss.size() != 1) throw std::runtime_error("backward() needs a scalar loss");
  auto node = loss.node();
  node->ensure_grad();
  node->grad[0] += 1.0;
  tape.replay_reverse();
}

namespace ops {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// b broadcasts over a when b's shape is a trailing suffix of a's.
index_t suffix_broadcast_size(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size())
    throw std::runtime_error(std::string(op) + ": shape " + shape_str(bs) +
                             " does not broadcast over " + shape_str(as));
  const std::size_t off = as.size() - bs.size();
  for (std::size_t i = 0; i < bs.size(); ++i)
    if (bs[i] != as[off + i])
      throw std::runtime_error(std::string(op) + ": shape " + shape_str(bs) +
                               " does not broadcast over " + shape_str(as));
  return b.size();
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const index_t m = suffix_broadcast_size(a, b, "add");
  const index_t n = a.size();
  Tensor out(a.shape());
  if (m == n) {
    kernels::ew_add(n, a.data(), b.data(), out.data());
  } else {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (index_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % m];
  }
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, n, m] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        kernels::axpy(n, 1.0, g, an->grad.data());
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* bg = bn->grad.data();
        for (index_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (index_t lead = i; lead < n; lead += m) s += g[lead];
          bg[i] += s;
        }
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const index_t m = suffix_broadcast_size(a, b, "mul");
  const index_t n = a.size();
  Tensor out(a.shape());
  if (m == n) {
    kernels::ew_mul(n, a.data(), b.data(), out.data());
  } else {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (index_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i % m];
  }
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, n, m] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* ag = an->grad.data();
        const double* bv = bn->value.data();
        if (m == n) {
          kernels::ew_mul_acc(n, g, bv, ag);
        } else {
          for (index_t i = 0; i < n; ++i) ag[i] += g[i] * bv[i % m];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* bg = bn->grad.data();
        const double* av = an->value.data();
        if (m == n) {
          kernels::ew_mul_acc(n, g, av, bg);
        } else {
          for (index_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (index_t lead = i; lead < n; lead += m) s += g[lead] * av[lead];
            bg[i] += s;
          }
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  kernels::ew_scale(a.size(), a.data(), c, out.data());
  if (recording({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    const index_t n = a.size();
    active_tape()->record([an, on, n, c] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      kernels::axpy(n, c, on->grad.data(), an->grad.data());
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  kernels::relu_forward(x.size(), x.data(), out.data());
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    const index_t n = x.size();
    active_tape()->record([xn, on, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      kernels::relu_backward(n, xn->value.data(), on->grad.data(), xn->grad.data());
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::runtime_error("matmul: ranks must be >= 2, got " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
  const bool b_batched = b.rank() > 2;
  if (b_batched && b.rank() != a.rank())
    throw std::runtime_error("matmul: batched operand ranks differ");
  const index_t p = a.dim(a.rank() - 2);
  const index_t q = a.dim(a.rank() - 1);
  const index_t r = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != q)
    throw std::runtime_error("matmul: inner dims disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
  index_t batch = 1;
  shape_t out_shape(a.shape());
  for (int i = 0; i + 2 < a.rank(); ++i) {
    batch *= a.dim(i);
    if (b_batched && b.dim(i) != a.dim(i))
      throw std::runtime_error("matmul: batch dims disagree, " + shape_str(a.shape()) +
                               " x " + shape_str(b.shape()));
  }
  out_shape[out_shape.size() - 1] = r;
  Tensor out(out_shape);
  kernels::matmul_nn(batch, p, q, r, a.data(), b.data(), b_batched, out.data());
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, batch, p, q, r, b_batched] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        kernels::matmul_nt(batch, p, r, q, g, bn->value.data(), b_batched,
                           an->grad.data(), true);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (b_batched) {
          for (index_t bi = 0; bi < batch; ++bi)
            kernels::matmul_tn(p, q, r, an->value.data() + bi * p * q,
                               g + bi * p * r, bn->grad.data() + bi * q * r, true);
        } else {
          kernels::matmul_tn(batch * p, q, r, an->value.data(), g, bn->grad.data(), true);
        }
      }
    });
  }
  return out;
}

namespace {

void permute_copy(const shape_t& in_shape, const std::vector<int>& axes,
                  const double* src, double* dst, bool accumulate_into_src) {
  const int rank = static_cast<int>(in_shape.size());
  std::vector<index_t> in_strides(static_cast<std::size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * in_shape[static_cast<std::size_t>(i + 1)];
  shape_t out_shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i)
    out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  const index_t n = numel(in_shape);
  std::vector<index_t> ix(static_cast<std::size_t>(rank), 0);
  for (index_t o = 0; o < n; ++o) {
    index_t src_off = 0;
    for (int i = 0; i < rank; ++i)
      src_off += ix[static_cast<std::size_t>(i)] *
                 in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    if (accumulate_into_src)
      // here `src` indexes the permuted layout and `dst` the original
      dst[src_off] += src[o];
    else
      dst[o] = src[src_off];
    for (int i = rank - 1; i >= 0; --i) {
      if (++ix[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      ix[static_cast<std::size_t>(i)] = 0;
    }
  }
}

} // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int rank = x.rank();
  if (static_cast<int>(axes.size()) != rank)
    throw std::runtime_error("permute: axes size must equal rank");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (int a : axes) {
    if (a < 0 || a >= rank || seen[static_cast<std::size_t>(a)])
      throw std::runtime_error("permute: axes must be a permutation of 0..rank-1");
    seen[static_cast<std::size_t>(a)] = true;
  }
  shape_t out_shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i)
    out_shape[static_cast<std::size_t>(i)] = x.dim(axes[static_cast<std::size_t>(i)]);
  Tensor out(out_shape);
  permute_copy(x.shape(), axes, x.data(), out.data(), false);
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    const shape_t in_shape = x.shape();
    const std::vector<int> ax = axes;
    active_tape()->record([xn, on, in_shape, ax] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      permute_copy(in_shape, ax, on->grad.data(), xn->grad.data(), true);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, shape_t shape) {
  if (numel(shape) != x.size())
    throw std::runtime_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
  Tensor out(std::move(shape), x.values());
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    const index_t n = x.size();
    active_tape()->record([xn, on, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      kernels::axpy(n, 1.0, on->grad.data(), xn->grad.data());
    });
  }
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_last: no inputs");
  const int rank = parts[0].rank();
  if (rank < 1) throw std::runtime_error("concat_last: rank-0 input");
  index_t total_last = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != rank)
      throw std::runtime_error("concat_last: rank mismatch");
    for (int i = 0; i + 1 < rank; ++i)
      if (t.dim(i) != parts[0].dim(i))
        throw std::runtime_error("concat_last: leading dims disagree, " +
                                 shape_str(parts[0].shape()) + " vs " + shape_str(t.shape()));
    total_last += t.dim(rank - 1);
  }
  shape_t out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(rank - 1)] = total_last;
  Tensor out(out_shape);
  const index_t rows = out.size() / total_last;
  index_t col_off = 0;
  for (const Tensor& t : parts) {
    const index_t cols = t.dim(rank - 1);
    const double* src = t.data();
    double* dst = out.data();
    for (index_t row = 0; row < rows; ++row)
      std::memcpy(dst + row * total_last + col_off, src + row * cols,
                  static_cast<std::size_t>(cols) * sizeof(double));
    col_off += cols;
  }
  bool any_grad = false;
  for (const Tensor& t : parts) any_grad = any_grad || t.requires_grad();
  if (active_tape() && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<index_t> widths;
    for (const Tensor& t : parts) {
      nodes.push_back(t.node());
      widths.push_back(t.dim(rank - 1));
    }
    auto on = out.node();
    active_tape()->record([nodes, widths, on, rows, total_last] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      index_t off = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const index_t cols = widths[pi];
        if (nodes[pi]->requires_grad) {
          nodes[pi]->ensure_grad();
          double* dst = nodes[pi]->grad.data();
          for (index_t row = 0; row < rows; ++row)
            for (index_t c = 0; c < cols; ++c)
              dst[row * cols + c] += g[row * total_last + off + c];
        }
        off += cols;
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw std::runtime_error("softmax_rows: rank-0 input");
  const index_t cols = x.dim(x.rank() - 1);
  const index_t rows = x.size() / cols;
  Tensor out(x.shape());
  kernels::softmax_forward(rows, cols, x.data(), out.data());
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, rows, cols] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      kernels::softmax_backward(rows, cols, on->value.data(), on->grad.data(),
                                xn->grad.data());
    });
  }
  return out;
}

Tensor attention_scores(const Tensor& k, const Tensor& q, double scale) {
  if (k.rank() != 3 || q.rank() != 3 || k.shape() != q.shape())
    throw std::runtime_error("attention_scores: need matching [B,len,d] inputs, got " +
                             shape_str(k.shape()) + " and " + shape_str(q.shape()));
  const index_t batch = k.dim(0), len = k.dim(1), d = k.dim(2);
  Tensor out(shape_t{batch, len, len});
  kernels::attention_scores_forward(batch, len, d, k.data(), q.data(), scale, out.data());
  if (recording({&k, &q})) {
    out.set_requires_grad(true);
    auto kn = k.node(), qn = q.node(), on = out.node();
    active_tape()->record([kn, qn, on, batch, len, d, scale] {
      if (on->grad.empty()) return;
      kn->ensure_grad();
      qn->ensure_grad();
      kernels::attention_scores_backward(batch, len, d, kn->value.data(), qn->value.data(),
                                         scale, on->value.data(), on->grad.data(),
                                         kn->grad.data(), qn->grad.data());
    });
  }
  return out;
}

Tensor attention_apply(const Tensor& m, const Tensor& v) {
  if (m.rank() != 3 || v.rank() != 3 || m.dim(0) != v.dim(0) || m.dim(2) != v.dim(1))
    throw std::runtime_error("attention_apply: incompatible shapes " + shape_str(m.shape()) +
                             " and " + shape_str(v.shape()));
  const index_t batch = m.dim(0), rows = m.dim(1), cols = m.dim(2), d = v.dim(2);
  Tensor out(shape_t{batch, rows, d});
  kernels::attention_apply_forward(batch, rows, cols, d, m.data(), v.data(), out.data());
  if (recording({&m, &v})) {
    out.set_requires_grad(true);
    auto mn = m.node(), vn = v.node(), on = out.node();
    active_tape()->record([mn, vn, on, batch, rows, cols, d] {
      if (on->grad.empty()) return;
      mn->ensure_grad();
      vn->ensure_grad();
      kernels::attention_apply_backward(batch, rows, cols, d, mn->value.data(),
                                        vn->value.data(), on->grad.data(),
                                        mn->grad.data(), vn->grad.data());
    });
  }
  return out;
}

namespace {

struct AxisView {
  index_t P, L, Q, C;
};

AxisView axis_view(const Tensor& x, int axis, const char* op) {
  const int rank = x.rank();
  if (rank < 2) throw std::runtime_error(std::string(op) + ": rank must be >= 2");
  if (axis < 0 || axis >= rank - 1)
    throw std::runtime_error(std::string(op) + ": axis " + std::to_string(axis) +
                             " invalid for shape " + shape_str(x.shape()));
  AxisView v{1, x.dim(axis), 1, x.dim(rank - 1)};
  for (int i = 0; i < axis; ++i) v.P *= x.dim(i);
  for (int i = axis + 1; i + 1 < rank; ++i) v.Q *= x.dim(i);
  return v;
}

} // namespace

Tensor dilated_conv_axis(const Tensor& x, const Tensor& w, int axis, index_t dilation) {
  const AxisView v = axis_view(x, axis, "dilated_conv_axis");
  if (w.rank() != 3)
    throw std::runtime_error("dilated_conv_axis: weight must be [k,Ci,Co], got " +
                             shape_str(w.shape()));
  if (w.dim(1) != v.C)
    throw std::runtime_error("dilated_conv_axis: weight Ci " + std::to_string(w.dim(1)) +
                             " != input channels " + std::to_string(v.C));
  if (dilation < 1) throw std::runtime_error("dilated_conv_axis: dilation must be >= 1");
  if (w.dim(0) % 2 == 0)
    throw std::runtime_error("dilated_conv_axis: kernel size must be odd, got " +
                             std::to_string(w.dim(0)));
  const index_t k = w.dim(0), co = w.dim(2);
  shape_t out_shape = x.shape();
  out_shape[out_shape.size() - 1] = co;
  Tensor out(out_shape);
  kernels::conv1d_forward(v.P, v.L, v.Q, v.C, co, k, dilation, x.data(), w.data(), out.data());
  if (recording({&x, &w})) {
    out.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), on = out.node();
    active_tape()->record([xn, wn, on, v, k, co, dilation] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        kernels::conv1d_backward_data(v.P, v.L, v.Q, v.C, co, k, dilation, g,
                                      wn->value.data(), xn->grad.data());
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        kernels::conv1d_backward_weight(v.P, v.L, v.Q, v.C, co, k, dilation,
                                        xn->value.data(), g, wn->grad.data());
      }
    });
  }
  return out;
}

Tensor maxpool_axis(const Tensor& x, int axis, index_t window) {
  const AxisView v = axis_view(x, axis, "maxpool_axis");
  if (window < 1 || window % 2 == 0)
    throw std::runtime_error("maxpool_axis: window must be odd and positive, got " +
                             std::to_string(window));
  Tensor out(x.shape());
  auto argmax = std::make_shared<std::vector<index_t>>(static_cast<std::size_t>(x.size()));
  kernels::maxpool_forward(v.P, v.L, v.Q, v.C, window, x.data(), out.data(), argmax->data());
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, v, window, argmax] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      kernels::maxpool_backward(v.P, v.L, v.Q, v.C, window, argmax->data(),
                                on->grad.data(), xn->grad.data());
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw std::runtime_error("layer_norm: rank-0 input");
  const index_t C = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != C || bias.rank() != 1 || bias.dim(0) != C)
    throw std::runtime_error("layer_norm: gain/bias must be [C] with C=" + std::to_string(C));
  const index_t rows = x.size() / C;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  kernels::layernorm_forward(rows, C, x.data(), gain.data(), bias.data(), eps,
                             out.data(), xhat->data(), inv_sigma->data());
  if (recording({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    active_tape()->record([xn, gn, bn, on, rows, C, xhat, inv_sigma] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      gn->ensure_grad();
      bn->ensure_grad();
      kernels::layernorm_backward(rows, C, xhat->data(), inv_sigma->data(),
                                  gn->value.data(), on->grad.data(), xn->grad.data(),
                                  gn->grad.data(), bn->grad.data());
    });
  }
  return out;
}

Tensor global_average_pool(const Tensor& x) {
  if (x.rank() < 3)
    throw std::runtime_error("global_average_pool: need [B,...,C], got " +
                             shape_str(x.shape()));
  const index_t batch = x.dim(0);
  const index_t C = x.dim(x.rank() - 1);
  const index_t positions = x.size() / (batch * C);
  Tensor out(shape_t{batch, C});
  kernels::gap_forward(batch, positions, C, x.data(), out.data());
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, batch, positions, C] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      kernels::gap_backward(batch, positions, C, on->grad.data(), xn->grad.data());
    });
  }
  return out;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<index_t>& labels) {
  if (logits.rank() != 2)
    throw std::runtime_error("cross_entropy_mean: logits must be [B,K], got " +
                             shape_str(logits.shape()));
  const index_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<index_t>(labels.size()) != B)
    throw std::runtime_error("cross_entropy_mean: " + std::to_string(labels.size()) +
                             " labels for batch " + std::to_string(B));
  for (index_t lab : labels)
    if (lab < 0 || lab >= K)
      throw std::runtime_error("cross_entropy_mean: label out of range [0," +
                               std::to_string(K) + ")");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * K));
  double total = 0.0;
  const double* x = logits.data();
  for (index_t i = 0; i < B; ++i) {
    const double* xi = x + i * K;
    double m = xi[0];
    for (index_t j = 1; j < K; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (index_t j = 0; j < K; ++j) s += std::exp(xi[j] - m);
    const double lse = m + std::log(s);
    for (index_t j = 0; j < K; ++j)
      (*probs)[static_cast<std::size_t>(i * K + j)] = std::exp(xi[j] - lse);
    total += lse - xi[labels[static_cast<std::size_t>(i)]];
  }
  Tensor out(shape_t{}, std::vector<double>{total / static_cast<double>(B)});
  if (recording({&logits})) {
    out.set_requires_grad(true);
    auto xn = logits.node(), on = out.node();
    const std::vector<index_t> labs = labels;
    active_tape()->record([xn, on, probs, labs, B, K] {
      if (on->grad.empty()) return;
      const double g = on->grad[0] / static_cast<double>(B);
      xn->ensure_grad();
      double* dx = xn->grad.data();
      for (index_t i = 0; i < B; ++i)
        for (index_t j = 0; j < K; ++j) {
          double p = (*probs)[static_cast<std::size_t>(i * K + j)];
          if (j == labs[static_cast<std::size_t>(i)]) p -= 1.0;
          dx[i * K + j] += g * p;
        }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const double* v = x.data();
  const index_t n = x.size();
  for (index_t i = 0; i < n; ++i) s += v[i];
  Tensor out(shape_t{}, std::vector<double>{s});
  if (recording({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    active_tape()->record([xn, on, n] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      xn->ensure_grad();
      double* dx = xn->grad.data();
      for (index_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

} // namespace ops

double Rng::uniform() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

index_t Rng::randint(index_t n) {
  if (n <= 0) throw std::runtime_error("randint: n must be positive");
  return static_cast<index_t>(uniform() * static_cast<double>(n));
}

std::vector<index_t> Rng::permutation(index_t n) {
  std::vector<index_t> p(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (index_t i = n - 1; i > 0; --i) {
    const index_t j = randint(i + 1);
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
  for (double& v : t.values()) v = uniform(lo, hi);
}

void Rng::fill_normal(Tensor& t, double mean, double stddev) {
  for (double& v : t.values()) v = mean + stddev * normal();
}

} // namespace msst
