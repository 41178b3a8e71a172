#include "msst/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace msst::kernels {

namespace {
std::atomic<bool> g_parallel{true};

thread_local std::vector<double> tl_scratch;

// Order-invariant summation: every term is truncated at a fixed absolute
// resolution (a power of two derived from an order-invariant bound on the
// largest |term|) and the truncated integers are summed exactly, so the
// result is bit-identical for any ordering of the terms.
constexpr double k_fp_scale = 2305843009213693952.0; // 2^61
constexpr double k_fp_inv_scale = 1.0 / k_fp_scale;

// Power-of-two multiplier that brings values bounded by `bound` close to
// 2^61 without overflowing the int64 truncation below.
inline double invariant_scale(double bound, double* inv_scale) {
  int e = 0;
  std::frexp(bound, &e);
  int shift = 61 - e;
  if (shift > 1022) shift = 1022;
  *inv_scale = std::ldexp(1.0, -shift);
  return std::ldexp(1.0, shift);
}

} // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

void matmul_nn(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c) {
  const bool par = parallel_enabled();
  const index_t rows = batch * p;
#pragma omp parallel for schedule(static) if (par)
  for (index_t row = 0; row < rows; ++row) {
    const index_t bi = row / p;
    const double* arow = a + row * q;
    const double* bmat = b + (b_batched ? bi * q * r : 0);
    double* crow = c + row * r;
    for (index_t j = 0; j < r; ++j) crow[j] = 0.0;
    for (index_t k = 0; k < q; ++k) {
      const double av = arow[k];
      const double* brow = bmat + k * r;
      for (index_t j = 0; j < r; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c,
               bool accumulate) {
  const bool par = parallel_enabled();
  const index_t rows = batch * p;
#pragma omp parallel for schedule(static) if (par)
  for (index_t row = 0; row < rows; ++row) {
    const index_t bi = row / p;
    const double* arow = a + row * q;
    const double* bmat = b + (b_batched ? bi * r * q : 0);
    double* crow = c + row * r;
    for (index_t j = 0; j < r; ++j) {
      const double* brow = bmat + j * q;
      double s = 0.0;
      for (index_t k = 0; k < q; ++k) s += arow[k] * brow[k];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void matmul_tn(index_t rows, index_t p, index_t r,
               const double* a, const double* b, double* c, bool accumulate) {
  const bool par = parallel_enabled();
#pragma omp parallel if (par)
  {
    // Stream b row-major into a per-thread buffer; fold into c once at the
    // end so the per-element rounding sequence matches the serial reference.
    std::vector<double> local(static_cast<std::size_t>(r));
#pragma omp for schedule(static)
    for (index_t i = 0; i < p; ++i) {
      std::fill(local.begin(), local.end(), 0.0);
      for (index_t row = 0; row < rows; ++row) {
        const double av = a[row * p + i];
        const double* brow = b + row * r;
        for (index_t j = 0; j < r; ++j) local[static_cast<std::size_t>(j)] += av * brow[j];
      }
      double* crow = c + i * r;
      if (accumulate)
        for (index_t j = 0; j < r; ++j) crow[j] += local[static_cast<std::size_t>(j)];
      else
        for (index_t j = 0; j < r; ++j) crow[j] = local[static_cast<std::size_t>(j)];
    }
  }
}

void conv1d_forward(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                    index_t k, index_t dilation,
                    const double* x, const double* w, double* y) {
  const bool par = parallel_enabled();
  const index_t center = k / 2;
  const index_t outs = P * L * Q;
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < outs; ++o) {
    const index_t q = o % Q;
    const index_t l = (o / Q) % L;
    const index_t pslice = o / (Q * L);
    double* yrow = y + o * Co;
    for (index_t co = 0; co < Co; ++co) yrow[co] = 0.0;
    for (index_t dk = 0; dk < k; ++dk) {
      const index_t lin = l + (dk - center) * dilation;
      if (lin < 0 || lin >= L) continue;
      const double* xrow = x + ((pslice * L + lin) * Q + q) * Ci;
      const double* wmat = w + dk * Ci * Co;
      for (index_t ci = 0; ci < Ci; ++ci) {
        const double xv = xrow[ci];
        const double* wrow = wmat + ci * Co;
        for (index_t co = 0; co < Co; ++co) yrow[co] += xv * wrow[co];
      }
    }
  }
}

void conv1d_backward_data(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                          index_t k, index_t dilation,
                          const double* dy, const double* w, double* dx) {
  const bool par = parallel_enabled();
  const index_t center = k / 2;
  const index_t ins = P * L * Q;
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < ins; ++o) {
    const index_t q = o % Q;
    const index_t l = (o / Q) % L;
    const index_t pslice = o / (Q * L);
    double* dxrow = dx + o * Ci;
    for (index_t dk = 0; dk < k; ++dk) {
      // output position that reads input l through tap dk
      const index_t lout = l - (dk - center) * dilation;
      if (lout < 0 || lout >= L) continue;
      const double* dyrow = dy + ((pslice * L + lout) * Q + q) * Co;
      const double* wmat = w + dk * Ci * Co;
      for (index_t ci = 0; ci < Ci; ++ci) {
        const double* wrow = wmat + ci * Co;
        double s = 0.0;
        for (index_t co = 0; co < Co; ++co) s += dyrow[co] * wrow[co];
        dxrow[ci] += s;
      }
    }
  }
}

void conv1d_backward_weight(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                            index_t k, index_t dilation,
                            const double* x, const double* dy, double* dw) {
  const bool par = parallel_enabled();
  const index_t center = k / 2;
#pragma omp parallel for schedule(static) if (par)
  for (index_t dk = 0; dk < k; ++dk) {
    double* wmat = dw + dk * Ci * Co;
    for (index_t pslice = 0; pslice < P; ++pslice) {
      for (index_t l = 0; l < L; ++l) {
        const index_t lin = l + (dk - center) * dilation;
        if (lin < 0 || lin >= L) continue;
        for (index_t q = 0; q < Q; ++q) {
          const double* xrow = x + ((pslice * L + lin) * Q + q) * Ci;
          const double* dyrow = dy + ((pslice * L + l) * Q + q) * Co;
          for (index_t ci = 0; ci < Ci; ++ci) {
            const double xv = xrow[ci];
            double* wrow = wmat + ci * Co;
            for (index_t co = 0; co < Co; ++co) wrow[co] += xv * dyrow[co];
          }
        }
      }
    }
  }
}

void maxpool_forward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                     const double* x, double* y, index_t* argmax) {
  const bool par = parallel_enabled();
  const index_t center = window / 2;
  const index_t outs = P * L * Q * C;
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < outs; ++o) {
    const index_t c = o % C;
    const index_t q = (o / C) % Q;
    const index_t l = (o / (C * Q)) % L;
    const index_t pslice = o / (C * Q * L);
    double best = -std::numeric_limits<double>::infinity();
    index_t best_idx = -1;
    for (index_t dk = 0; dk < window; ++dk) {
      const index_t lin = l + (dk - center);
      if (lin < 0 || lin >= L) continue;
      const index_t idx = ((pslice * L + lin) * Q + q) * C + c;
      if (x[idx] > best) {
        best = x[idx];
        best_idx = idx;
      }
    }
    y[o] = best;
    argmax[o] = best_idx;
  }
}

void maxpool_backward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                      const index_t* argmax, const double* dy, double* dx) {
  const bool par = parallel_enabled();
  const index_t center = window / 2;
  const index_t ins = P * L * Q * C;
  // gather form: each input position sums over the outputs that selected it
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < ins; ++o) {
    const index_t c = o % C;
    const index_t q = (o / C) % Q;
    const index_t l = (o / (C * Q)) % L;
    const index_t pslice = o / (C * Q * L);
    double s = 0.0;
    for (index_t dk = 0; dk < window; ++dk) {
      const index_t lout = l - (dk - center);
      if (lout < 0 || lout >= L) continue;
      const index_t oidx = ((pslice * L + lout) * Q + q) * C + c;
      if (argmax[oidx] == o) s += dy[oidx];
    }
    dx[o] += s;
  }
}

void softmax_forward(index_t rows, index_t cols, const double* x, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t i = 0; i < rows; ++i) {
    const double* xi = x + i * cols;
    double* yi = y + i * cols;
    double m = xi[0];
    for (index_t j = 1; j < cols; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (index_t j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - m);
      s += yi[j];
    }
    for (index_t j = 0; j < cols; ++j) yi[j] /= s;
  }
}

void softmax_backward(index_t rows, index_t cols, const double* y,
                      const double* dy, double* dx) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t i = 0; i < rows; ++i) {
    const double* yi = y + i * cols;
    const double* dyi = dy + i * cols;
    double* dxi = dx + i * cols;
    double dot = 0.0;
    for (index_t j = 0; j < cols; ++j) dot += dyi[j] * yi[j];
    for (index_t j = 0; j < cols; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
  }
}

namespace {

// Softmax of one score row. After max subtraction every term lies in (0,1],
// so a fixed 2^61 scaling fits each truncated term in int64; the exact
// integer sum makes the denominator independent of term order.
inline void invariant_softmax_row(double* row, index_t n) {
  double m = row[0];
  for (index_t j = 1; j < n; ++j) m = std::max(m, row[j]);
  __int128 acc = 0;
  for (index_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - m);
    acc += static_cast<long long>(row[j] * k_fp_scale);
  }
  const double inv = 1.0 / (static_cast<double>(acc) * k_fp_inv_scale);
  for (index_t j = 0; j < n; ++j) row[j] *= inv;
}

} // namespace

void attention_scores_forward(index_t batch, index_t len, index_t d,
                              const double* k, const double* q, double scale,
                              double* attn) {
  const bool par = parallel_enabled();
  const index_t rows = batch * len;
#pragma omp parallel for schedule(static) if (par)
  for (index_t row = 0; row < rows; ++row) {
    const index_t bi = row / len;
    const double* ki = k + row * d;
    const double* qb = q + bi * len * d;
    double* arow = attn + row * len;
    for (index_t j = 0; j < len; ++j) {
      const double* qj = qb + j * d;
      double s = 0.0;
      for (index_t dd = 0; dd < d; ++dd) s += ki[dd] * qj[dd];
      arow[j] = s * scale;
    }
    invariant_softmax_row(arow, len);
  }
}

void attention_scores_backward(index_t batch, index_t len, index_t d,
                               const double* k, const double* q, double scale,
                               const double* attn, const double* dattn,
                               double* dk, double* dq) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t bi = 0; bi < batch; ++bi) {
    tl_scratch.resize(static_cast<std::size_t>(len) * len);
    double* ds = tl_scratch.data();
    const double* ab = attn + bi * len * len;
    const double* dab = dattn + bi * len * len;
    for (index_t i = 0; i < len; ++i) {
      const double* ai = ab + i * len;
      const double* dai = dab + i * len;
      double dot = 0.0;
      for (index_t j = 0; j < len; ++j) dot += dai[j] * ai[j];
      double* dsi = ds + i * len;
      for (index_t j = 0; j < len; ++j) dsi[j] = ai[j] * (dai[j] - dot);
    }
    const double* kb = k + bi * len * d;
    const double* qb = q + bi * len * d;
    double* dkb = dk + bi * len * d;
    double* dqb = dq + bi * len * d;
    // dK += scale * dS * Q ; dQ += scale * dS^T * K
    for (index_t i = 0; i < len; ++i) {
      const double* dsi = ds + i * len;
      double* dki = dkb + i * d;
      for (index_t j = 0; j < len; ++j) {
        const double g = scale * dsi[j];
        const double* qj = qb + j * d;
        for (index_t dd = 0; dd < d; ++dd) dki[dd] += g * qj[dd];
      }
    }
    for (index_t i = 0; i < len; ++i) {
      const double* dsi = ds + i * len;
      const double* ki = kb + i * d;
      for (index_t j = 0; j < len; ++j) {
        const double g = scale * dsi[j];
        double* dqj = dqb + j * d;
        for (index_t dd = 0; dd < d; ++dd) dqj[dd] += g * ki[dd];
      }
    }
  }
}

namespace {

// One output row of M V: |m_j * v_jd| is bounded by max|m_row| * max|v_col|
// (both maxima order-invariant), which fixes the truncation resolution.
inline void invariant_apply_row(const double* mrow, const double* vb,
                                const double* vcolmax, index_t cols, index_t d,
                                double* yrow) {
  double mmax = 0.0;
  for (index_t j = 0; j < cols; ++j) mmax = std::max(mmax, std::fabs(mrow[j]));
  for (index_t dd = 0; dd < d; ++dd) {
    const double bound = mmax * vcolmax[dd];
    if (bound == 0.0) {
      yrow[dd] = 0.0;
      continue;
    }
    double inv_s = 0.0;
    const double s = invariant_scale(bound, &inv_s);
    __int128 acc = 0;
    for (index_t j = 0; j < cols; ++j)
      acc += static_cast<long long>(mrow[j] * vb[j * d + dd] * s);
    yrow[dd] = static_cast<double>(acc) * inv_s;
  }
}

inline void v_column_max(const double* vb, index_t cols, index_t d, double* vcolmax) {
  for (index_t dd = 0; dd < d; ++dd) vcolmax[dd] = 0.0;
  for (index_t j = 0; j < cols; ++j)
    for (index_t dd = 0; dd < d; ++dd)
      vcolmax[dd] = std::max(vcolmax[dd], std::fabs(vb[j * d + dd]));
}

} // namespace

void attention_apply_forward(index_t batch, index_t rows, index_t cols, index_t d,
                             const double* m, const double* v, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t bi = 0; bi < batch; ++bi) {
    tl_scratch.resize(static_cast<std::size_t>(d));
    const double* vb = v + bi * cols * d;
    v_column_max(vb, cols, d, tl_scratch.data());
    for (index_t i = 0; i < rows; ++i)
      invariant_apply_row(m + (bi * rows + i) * cols, vb, tl_scratch.data(),
                          cols, d, y + (bi * rows + i) * d);
  }
}

void attention_apply_backward(index_t batch, index_t rows, index_t cols, index_t d,
                              const double* m, const double* v, const double* dy,
                              double* dm, double* dv) {
  // dM[b] += dY[b] V[b]^T
  matmul_nt(batch, rows, d, cols, dy, v, true, dm, true);
  // dV[b] += M[b]^T dY[b], per batch slice
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t bi = 0; bi < batch; ++bi) {
    const double* mb = m + bi * rows * cols;
    const double* dyb = dy + bi * rows * d;
    double* dvb = dv + bi * cols * d;
    for (index_t j = 0; j < cols; ++j) {
      double* dvj = dvb + j * d;
      for (index_t i = 0; i < rows; ++i) {
        const double mv = mb[i * cols + j];
        const double* dyi = dyb + i * d;
        for (index_t dd = 0; dd < d; ++dd) dvj[dd] += mv * dyi[dd];
      }
    }
  }
}

void layernorm_forward(index_t rows, index_t C, const double* x,
                       const double* gain, const double* bias, double eps,
                       double* y, double* xhat, double* inv_sigma) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t i = 0; i < rows; ++i) {
    const double* xi = x + i * C;
    double* yi = y + i * C;
    double* xh = xhat + i * C;
    double mean = 0.0;
    for (index_t c = 0; c < C; ++c) mean += xi[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (index_t c = 0; c < C; ++c) {
      const double dcen = xi[c] - mean;
      var += dcen * dcen;
    }
    var /= static_cast<double>(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (index_t c = 0; c < C; ++c) {
      xh[c] = (xi[c] - mean) * inv;
      yi[c] = gain[c] * xh[c] + bias[c];
    }
  }
}

void layernorm_backward(index_t rows, index_t C, const double* xhat,
                        const double* inv_sigma, const double* gain,
                        const double* dy, double* dx, double* dgain, double* dbias) {
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (index_t i = 0; i < rows; ++i) {
    const double* xh = xhat + i * C;
    const double* dyi = dy + i * C;
    double* dxi = dx + i * C;
    double m1 = 0.0, m2 = 0.0;
    for (index_t c = 0; c < C; ++c) {
      const double dxh = dyi[c] * gain[c];
      m1 += dxh;
      m2 += dxh * xh[c];
    }
    m1 /= static_cast<double>(C);
    m2 /= static_cast<double>(C);
    const double inv = inv_sigma[i];
    for (index_t c = 0; c < C; ++c) {
      const double dxh = dyi[c] * gain[c];
      dxi[c] += inv * (dxh - m1 - xh[c] * m2);
    }
  }
  // per-channel reductions over rows, ascending row order
#pragma omp parallel for schedule(static) if (par)
  for (index_t c = 0; c < C; ++c) {
    double dg = 0.0, db = 0.0;
    for (index_t i = 0; i < rows; ++i) {
      dg += dy[i * C + c] * xhat[i * C + c];
      db += dy[i * C + c];
    }
    dgain[c] += dg;
    dbias[c] += db;
  }
}

void gap_forward(index_t batch, index_t positions, index_t C,
                 const double* x, double* y) {
  const bool par = parallel_enabled();
  const index_t outs = batch * C;
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < outs; ++o) {
    const index_t c = o % C;
    const index_t bi = o / C;
    const double* xb = x + bi * positions * C;
    double s = 0.0;
    for (index_t pp = 0; pp < positions; ++pp) s += xb[pp * C + c];
    y[o] = s / static_cast<double>(positions);
  }
}

void gap_backward(index_t batch, index_t positions, index_t C,
                  const double* dy, double* dx) {
  const bool par = parallel_enabled();
  const index_t n = batch * positions * C;
  const double inv = 1.0 / static_cast<double>(positions);
#pragma omp parallel for schedule(static) if (par)
  for (index_t o = 0; o < n; ++o) {
    const index_t c = o % C;
    const index_t bi = o / (positions * C);
    dx[o] += dy[bi * C + c] * inv;
  }
}

void ew_add(index_t n, const double* a, const double* b, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void ew_mul(index_t n, const double* a, const double* b, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void ew_scale(index_t n, const double* a, double c, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * c;
}

void relu_forward(index_t n, const double* x, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void axpy(index_t n, double alpha, const double* x, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void ew_mul_acc(index_t n, const double* a, const double* b, double* y) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_backward(index_t n, const double* x, const double* dy, double* dx) {
  const bool par = parallel_enabled();
#pragma omp parallel for simd schedule(static) if (par)
  for (index_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

namespace ref {

void matmul_nn(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c) {
  for (index_t bi = 0; bi < batch; ++bi) {
    const double* ab = a + bi * p * q;
    const double* bb = b + (b_batched ? bi * q * r : 0);
    double* cb = c + bi * p * r;
    for (index_t i = 0; i < p; ++i)
      for (index_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (index_t k = 0; k < q; ++k) s += ab[i * q + k] * bb[k * r + j];
        cb[i * r + j] = s;
      }
  }
}

void matmul_nt(index_t batch, index_t p, index_t q, index_t r,
               const double* a, const double* b, bool b_batched, double* c,
               bool accumulate) {
  for (index_t bi = 0; bi < batch; ++bi) {
    const double* ab = a + bi * p * q;
    const double* bb = b + (b_batched ? bi * r * q : 0);
    double* cb = c + bi * p * r;
    for (index_t i = 0; i < p; ++i)
      for (index_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (index_t k = 0; k < q; ++k) s += ab[i * q + k] * bb[j * q + k];
        cb[i * r + j] = accumulate ? cb[i * r + j] + s : s;
      }
  }
}

void matmul_tn(index_t rows, index_t p, index_t r,
               const double* a, const double* b, double* c, bool accumulate) {
  for (index_t i = 0; i < p; ++i)
    for (index_t j = 0; j < r; ++j) {
      double s = 0.0;
      for (index_t row = 0; row < rows; ++row) s += a[row * p + i] * b[row * r + j];
      const index_t o = i * r + j;
      c[o] = accumulate ? c[o] + s : s;
    }
}

void conv1d_forward(index_t P, index_t L, index_t Q, index_t Ci, index_t Co,
                    index_t k, index_t dilation,
                    const double* x, const double* w, double* y) {
  const index_t center = k / 2;
  for (index_t pslice = 0; pslice < P; ++pslice)
    for (index_t l = 0; l < L; ++l)
      for (index_t q = 0; q < Q; ++q)
        for (index_t co = 0; co < Co; ++co) {
          double s = 0.0;
          for (index_t dk = 0; dk < k; ++dk) {
            const index_t lin = l + (dk - center) * dilation;
            if (lin < 0 || lin >= L) continue;
            for (index_t ci = 0; ci < Ci; ++ci)
              s += x[((pslice * L + lin) * Q + q) * Ci + ci] * w[(dk * Ci + ci) * Co + co];
          }
          y[((pslice * L + l) * Q + q) * Co + co] = s;
        }
}

void maxpool_forward(index_t P, index_t L, index_t Q, index_t C, index_t window,
                     const double* x, double* y, index_t* argmax) {
  const index_t center = window / 2;
  for (index_t pslice = 0; pslice < P; ++pslice)
    for (index_t l = 0; l < L; ++l)
      for (index_t q = 0; q < Q; ++q)
        for (index_t c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          index_t best_idx = -1;
          for (index_t dk = 0; dk < window; ++dk) {
            const index_t lin = l + (dk - center);
            if (lin < 0 || lin >= L) continue;
            const index_t idx = ((pslice * L + lin) * Q + q) * C + c;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
          y[((pslice * L + l) * Q + q) * C + c] = best;
          argmax[((pslice * L + l) * Q + q) * C + c] = best_idx;
        }
}

void softmax_forward(index_t rows, index_t cols, const double* x, double* y) {
  for (index_t i = 0; i < rows; ++i) {
    const double* xi = x + i * cols;
    double* yi = y + i * cols;
    double m = xi[0];
    for (index_t j = 1; j < cols; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (index_t j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - m);
      s += yi[j];
    }
    for (index_t j = 0; j < cols; ++j) yi[j] /= s;
  }
}

void attention_scores_forward(index_t batch, index_t len, index_t d,
                              const double* k, const double* q, double scale,
                              double* attn) {
  for (index_t bi = 0; bi < batch; ++bi)
    for (index_t i = 0; i < len; ++i) {
      const double* ki = k + (bi * len + i) * d;
      double* arow = attn + (bi * len + i) * len;
      for (index_t j = 0; j < len; ++j) {
        const double* qj = q + (bi * len + j) * d;
        double s = 0.0;
        for (index_t dd = 0; dd < d; ++dd) s += ki[dd] * qj[dd];
        arow[j] = s * scale;
      }
      invariant_softmax_row(arow, len);
    }
}

void attention_apply_forward(index_t batch, index_t rows, index_t cols, index_t d,
                             const double* m, const double* v, double* y) {
  std::vector<double> vcolmax(static_cast<std::size_t>(d));
  for (index_t bi = 0; bi < batch; ++bi) {
    const double* vb = v + bi * cols * d;
    v_column_max(vb, cols, d, vcolmax.data());
    for (index_t i = 0; i < rows; ++i)
      invariant_apply_row(m + (bi * rows + i) * cols, vb, vcolmax.data(),
                          cols, d, y + (bi * rows + i) * d);
  }
}

void layernorm_forward(index_t rows, index_t C, const double* x,
                       const double* gain, const double* bias, double eps,
                       double* y, double* xhat, double* inv_sigma) {
  for (index_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (index_t c = 0; c < C; ++c) mean += x[i * C + c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (index_t c = 0; c < C; ++c) {
      const double dcen = x[i * C + c] - mean;
      var += dcen * dcen;
    }
    var /= static_cast<double>(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (index_t c = 0; c < C; ++c) {
      xhat[i * C + c] = (x[i * C + c] - mean) * inv;
      y[i * C + c] = gain[c] * xhat[i * C + c] + bias[c];
    }
  }
}

void gap_forward(index_t batch, index_t positions, index_t C,
                 const double* x, double* y) {
  for (index_t bi = 0; bi < batch; ++bi)
    for (index_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (index_t pp = 0; pp < positions; ++pp) s += x[(bi * positions + pp) * C + c];
      y[bi * C + c] = s / static_cast<double>(positions);
    }
}

} // namespace ref

} // namespace msst::kernels
