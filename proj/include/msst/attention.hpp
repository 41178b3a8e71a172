#pragma once

#include <string>
#include <vector>

#include "msst/tensor.hpp"

namespace msst {

// Exported attention maps, one averaged len x len matrix per layer/head/kind.
struct AttentionTrace {
  struct Entry {
    int layer = 0;
    int head = 0;
    std::string kind; // "spatial" | "temporal"
    index_t len = 0;
    std::vector<double> map; // len x len, row-stochastic
  };
  std::vector<Entry> entries;
};

// One attention head. wq/wk/wv: [D, D']; topo (spatial only): [len, len].
struct HeadParams {
  Tensor wq, wk, wv;
  Tensor topo; // undefined for temporal attention
};

// Multi-head bundle; wo: [M*D', C_out].
struct AttentionParams {
  std::vector<HeadParams> heads;
  Tensor wo;
};

// Adds a learnable [len, D] position table to the matching trailing axes of
// h; callers apply this to the query/key pathway only.
Tensor add_positional(const Tensor& h, const Tensor& table);

// Single spatial head: {topo ⊙ softmax(H W_K (H W_Q)^T / sqrt(D'))} H W_V.
// h: [len, D] or [B, len, D]; output keeps the input rank with D' channels.
Tensor ssa_gc_head(const Tensor& h, const Tensor& wq, const Tensor& wk,
                   const Tensor& wv, const Tensor& topo);

// Single temporal head: the same map without a topology mask.
Tensor tsa_head(const Tensor& h, const Tensor& wq, const Tensor& wk,
                const Tensor& wv);

// Concatenate equal-length head outputs along channels and project by wo.
Tensor multi_head_fuse(const std::vector<Tensor>& heads, const Tensor& wo);

// Full multi-head attention over [B, len, D] with separate query/key input
// (position-encoded) and value input. Records per-head batch-averaged maps
// (before the topology mask) into trace when given.
Tensor multi_head_attention(const Tensor& h_qk, const Tensor& h_v,
                            const AttentionParams& params,
                            AttentionTrace* trace, int layer,
                            const std::string& kind);

} // namespace msst
