#include "msst/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace msst {

namespace {

// Shared Q/K/V + masked-softmax-apply path behind both head flavours.
// h_qk feeds queries and keys, h_v feeds values; topo (when defined)
// multiplies the attention map elementwise. pre_mask receives the
// row-stochastic map before masking, for trace export.
Tensor attention_head(const Tensor& h_qk, const Tensor& h_v, const Tensor& wq,
                      const Tensor& wk, const Tensor& wv, const Tensor& topo,
                      Tensor* pre_mask) {
  if (wq.rank() != 2 || wk.rank() != 2 || wv.rank() != 2)
    throw std::runtime_error("attention head: projection weights must be rank 2");
  if (wk.shape() != wq.shape() || wv.shape() != wq.shape())
    throw std::runtime_error("attention head: wq/wk/wv shapes differ (" +
                             shape_str(wq.shape()) + ", " + shape_str(wk.shape()) +
                             ", " + shape_str(wv.shape()) + ")");
  const index_t d_in = wq.dim(0);
  const index_t d_head = wq.dim(1);
  if (h_qk.dim(h_qk.rank() - 1) != d_in || h_v.dim(h_v.rank() - 1) != d_in)
    throw std::runtime_error("attention head: input width " +
                             std::to_string(h_qk.dim(h_qk.rank() - 1)) +
                             " does not match weight rows " + std::to_string(d_in));
  const index_t len = h_qk.dim(h_qk.rank() - 2);
  if (topo.defined() &&
      (topo.rank() != 2 || topo.dim(0) != len || topo.dim(1) != len))
    throw std::runtime_error("attention head: topology must be [len, len], got " +
                             shape_str(topo.shape()));

  Tensor q = ops::matmul(h_qk, wq);
  Tensor k = ops::matmul(h_qk, wk);
  Tensor v = ops::matmul(h_v, wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  Tensor map = ops::attention_scores(k, q, scale);
  if (pre_mask) *pre_mask = map;
  if (topo.defined()) map = ops::mul(map, topo);
  return ops::attention_apply(map, v);
}

// Promote [len, D] to [B=1, len, D] so the batched kernels apply.
Tensor as_batched(const Tensor& h) {
  if (h.rank() == 3) return h;
  if (h.rank() == 2) return ops::reshape(h, {1, h.dim(0), h.dim(1)});
  throw std::runtime_error("attention head: input must be rank 2 or 3, got " +
                           shape_str(h.shape()));
}

Tensor match_rank(const Tensor& out, const Tensor& like) {
  if (like.rank() == 2) return ops::reshape(out, {out.dim(1), out.dim(2)});
  return out;
}

} // namespace

Tensor add_positional(const Tensor& h, const Tensor& table) {
  if (table.rank() != 2)
    throw std::runtime_error("add_positional: table must be rank 2, got " +
                             shape_str(table.shape()));
  if (h.rank() < 2 || h.dim(h.rank() - 2) != table.dim(0) ||
      h.dim(h.rank() - 1) != table.dim(1))
    throw std::runtime_error("add_positional: trailing dims of " +
                             shape_str(h.shape()) + " do not match table " +
                             shape_str(table.shape()));
  return ops::add(h, table);
}

Tensor ssa_gc_head(const Tensor& h, const Tensor& wq, const Tensor& wk,
                   const Tensor& wv, const Tensor& topo) {
  if (!topo.defined())
    throw std::runtime_error("ssa_gc_head: topology matrix is required");
  Tensor hb = as_batched(h);
  return match_rank(attention_head(hb, hb, wq, wk, wv, topo, nullptr), h);
}

Tensor tsa_head(const Tensor& h, const Tensor& wq, const Tensor& wk,
                const Tensor& wv) {
  Tensor hb = as_batched(h);
  return match_rank(attention_head(hb, hb, wq, wk, wv, Tensor{}, nullptr), h);
}

Tensor multi_head_fuse(const std::vector<Tensor>& heads, const Tensor& wo) {
  if (heads.empty()) throw std::runtime_error("multi_head_fuse: no heads");
  for (const Tensor& t : heads)
    if (t.shape() != heads.front().shape())
      throw std::runtime_error("multi_head_fuse: head shapes differ (" +
                               shape_str(t.shape()) + " vs " +
                               shape_str(heads.front().shape()) + ")");
  Tensor cat = ops::concat_last(heads);
  if (wo.rank() != 2 || wo.dim(0) != cat.dim(cat.rank() - 1))
    throw std::runtime_error("multi_head_fuse: wo must be [" +
                             std::to_string(cat.dim(cat.rank() - 1)) + ", C_out], got " +
                             shape_str(wo.shape()));
  return ops::matmul(cat, wo);
}

Tensor multi_head_attention(const Tensor& h_qk, const Tensor& h_v,
                            const AttentionParams& params,
                            AttentionTrace* trace, int layer,
                            const std::string& kind) {
  if (h_qk.rank() != 3 || h_v.rank() != 3 || h_qk.shape() != h_v.shape())
    throw std::runtime_error("multi_head_attention: inputs must share a [B, len, D] shape");
  if (params.heads.empty())
    throw std::runtime_error("multi_head_attention: no heads configured");

  const index_t batch = h_qk.dim(0);
  const index_t len = h_qk.dim(1);
  std::vector<Tensor> outs;
  outs.reserve(params.heads.size());
  for (std::size_t m = 0; m < params.heads.size(); ++m) {
    const HeadParams& hp = params.heads[m];
    Tensor pre_mask;
    outs.push_back(attention_head(h_qk, h_v, hp.wq, hp.wk, hp.wv, hp.topo,
                                  trace ? &pre_mask : nullptr));
    if (trace) {
      AttentionTrace::Entry entry;
      entry.layer = layer;
      entry.head = static_cast<int>(m);
      entry.kind = kind;
      entry.len = len;
      entry.map.assign(static_cast<std::size_t>(len * len), 0.0);
      const double* src = pre_mask.data();
      const double inv_b = 1.0 / static_cast<double>(batch);
      for (index_t b = 0; b < batch; ++b)
        for (index_t i = 0; i < len * len; ++i)
          entry.map[static_cast<std::size_t>(i)] += src[b * len * len + i] * inv_b;
      trace->entries.push_back(std::move(entry));
    }
  }
  return multi_head_fuse(outs, params.wo);
}

} // namespace msst
