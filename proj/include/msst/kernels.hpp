#pragma once

#include <cstdint>

// Numeric inner loops shared by the tensor ops. Every kernel assigns each
// output element to exactly one worker and keeps the per-element reduction
// order fixed (ascending index, or an order-invariant fixed-point sum where
// noted), so results are bit-identical regardless of thread count. The serial
// implementations in kernels::ref are the reference the OpenMP versions are
// tested against.

namespace msst::kernels {

using index_t = std::int64_t;

// Runtime switch: when off, the OpenMP kernels run on the calling thread.
bool parallel_enabled();
void set_parallel(bool on);

// C[b] = A[b] * B[b]            A: [batch,p,q]  B: [batch,q,r]  C: [batch,p,r]
// b_batched=false shares one B across the batch.
void matmul_nn(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c);

// C[b] (+)= A[b] * B[b]^T       A: [batch,p,q]  B: [batch,r,q]  C: [batch,p,r]
void matmul_nt(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c,
               bool accumulate);

// C (+)= A^T * B, with A and B stacked over all batches:
// A: [rows,p]  B: [rows,r]  C: [p,r].  Used for shared-weight gradients.
void matmul_tn(index_t rows, index_t p, index_t r,
               const double* a, const double* b, double* c, bool accumulate);

// 1-D dilated convolution over the L axis of x viewed as [P,L,Q,Ci],
// dense channel mixing, zero same-padding.  w: [k,Ci,Co]  y: [P,L,Q,Co]
void conv1d_forward(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                    index_t k, index_t dilation,
                    const double* x, const double* w, double* y);
void conv1d_backward_data(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                          index_t k, index_t dilation,
                          const double* dy, const double* w, double* dx);
void conv1d_backward_weight(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                            index_t k, index_t dilation,
                            const double* x, const double* dy, double* dw);

// Windowed max over the L axis of x viewed as [P,L,Q,C], -inf padding.
// argmax records the flat input index feeding each output element.
void maxpool_forward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                     const double* x, double* y, index_t* argmax);
void maxpool_backward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                      const index_t* argmax, const double* dy, double* dx);

// Row softmax with max-subtraction.  x,y: [rows,cols]
void softmax_forward(index_t rows, index_t cols, const double* x, double* y);
void softmax_backward(index_t rows, index_t cols, const double* y,
                      const double* dy, double* dx);

// Fused attention map: attn[b] = softmax_rows(scale * K[b] Q[b]^T).
// K,Q: [batch,len,d]  attn: [batch,len,len].  The softmax denominator is
// accumulated in scaled fixed point (exact integer sum of per-term
// truncations), so the map is invariant (bitwise) under a joint permutation
// of the len axis of K and Q.
void attention_scores_forward(index_t batch, index_t len, index_t d,
                              const double* k, const double* q, double scale,
                              double* attn);
void attention_scores_backward(index_t batch, index_t len, index_t d,
                               const double* k, const double* q, double scale,
                               const double* attn, const double* dattn,
                               double* dk, double* dq);

// y[b] = M[b] V[b] with each inner sum accumulated in scaled fixed point
// (scale chosen from the largest |term|, itself order-invariant), so the
// product is bitwise invariant under a joint permutation of the cols axis.
// M: [batch,rows,cols]  V: [batch,cols,d]  y: [batch,rows,d]
void attention_apply_forward(index_t batch, index_t rows, index_t cols, index_t d,
                             const double* m, const double* v, double* y);
void attention_apply_backward(index_t batch, index_t rows, index_t cols, index_t d,
                              const double* m, const double* v, const double* dy,
                              double* dm, double* dv);

// Per-row channel normalization to zero mean / unit variance, then affine.
// x,y: [rows,C]; saves xhat and 1/sigma for the backward pass.
void layernorm_forward(index_t rows, index_t C, const double* x,
                       const double* gain, const double* bias, double eps,
                       double* y, double* xhat, double* inv_sigma);
void layernorm_backward(index_t rows, index_t C, const double* xhat,
                        const double* inv_sigma, const double* gain,
                        const double* dy, double* dx, double* dgain, double* dbias);

// Mean over all positions per (batch,channel).  x: [batch,positions,C]
void gap_forward(index_t batch, index_t positions, index_t C,
                 const double* x, double* y);
void gap_backward(index_t batch, index_t positions, index_t C,
                  const double* dy, double* dx);

// Elementwise helpers.
void ew_add(index_t n, const double* a, const double* b, double* y);
void ew_mul(index_t n, const double* a, const double* b, double* y);
void ew_scale(index_t n, const double* a, double c, double* y);
void relu_forward(index_t n, const double* x, double* y);
void axpy(index_t n, double alpha, const double* x, double* y);          // y += alpha*x
void ew_mul_acc(index_t n, const double* a, const double* b, double* y); // y += a*b
void relu_backward(index_t n, const double* x, const double* dy, double* dx);

// Serial reference implementations, kept for the equivalence tests and the
// kernel benchmark.  Same per-element summation order as the OpenMP kernels.
namespace ref {

void matmul_nn(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c);
void matmul_nt(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c,
               bool accumulate);
void matmul_tn(index_t rows, index_t p, index_t r,
               const double* a, const double* b, double* c, bool accumulate);
void conv1d_forward(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                    index_t k, index_t dilation,
                    const double* x, const double* w, double* y);
void maxpool_forward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                     const double* x, double* y, index_t* argmax);
void softmax_forward(index_t rows, index_t cols, const double* x, double* y);
void attention_scores_forward(index_t batch, index_t len, index_t d,
                              const double* k, const double* q, double scale,
                              double* attn);
void attention_apply_forward(index_t batch, index_t rows, index_t cols, index_t d,
                             const double* m, const double* v, double* y);
void layernorm_forward(index_t rows, index_t C, const double* x,
                       const double* gain, const double* bias, double eps,
                       double* y, double* xhat, double* inv_sigma);
void gap_forward(index_t batch, index_t positions, index_t C,
                 const double* x, double* y);

} // namespace ref

} // namespace msst::kernels
