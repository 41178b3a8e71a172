// Times the OpenMP kernels against their serial reference twins on
// model-scale workloads and verifies the outputs match bit for bit.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "msst/kernels.hpp"
#include "msst/tensor.hpp"

namespace {

using msst::index_t;

std::vector<double> random_values(index_t n, msst::Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double time_best_ms(const std::function<void()>& fn, int reps) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

int g_mismatches = 0;

void report(const char* name, double ref_ms, double omp_ms,
            const std::vector<double>& a, const std::vector<double>& b) {
  const bool equal = a == b;
  if (!equal) ++g_mismatches;
  std::printf("%-22s ref %8.3f ms   omp %8.3f ms   speedup %5.2fx   bitwise %s\n",
              name, ref_ms, omp_ms, ref_ms / omp_ms, equal ? "equal" : "DIFFER");
}

} // namespace

int main() {
  namespace k = msst::kernels;
  msst::Rng rng(42);
  const int reps = 5;
  std::printf("threads: OpenMP %s\n", k::parallel_enabled() ? "on" : "off");

  {
    const index_t batch = 50, p = 64, q = 64, r = 64;
    const auto a = random_values(batch * p * q, rng);
    const auto b = random_values(batch * q * r, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(batch * p * r));
    std::vector<double> omp_out(ref_out.size());
    const double t_ref = time_best_ms(
        [&] { k::ref::matmul_nn(batch, p, q, r, a.data(), b.data(), true, ref_out.data()); },
        reps);
    const double t_omp = time_best_ms(
        [&] { k::matmul_nn(batch, p, q, r, a.data(), b.data(), true, omp_out.data()); },
        reps);
    report("matmul_nn", t_ref, t_omp, ref_out, omp_out);
  }
  {
    const index_t p = 50, l = 64, q = 25, ci = 64, co = 64, kk = 5;
    const auto x = random_values(p * l * q * ci, rng);
    const auto w = random_values(kk * ci * co, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(p * l * q * co));
    std::vector<double> omp_out(ref_out.size());
    const double t_ref = time_best_ms(
        [&] { k::ref::conv1d_forward(p, l, q, ci, co, kk, 2, x.data(), w.data(), ref_out.data()); },
        reps);
    const double t_omp = time_best_ms(
        [&] { k::conv1d_forward(p, l, q, ci, co, kk, 2, x.data(), w.data(), omp_out.data()); },
        reps);
    report("conv1d dilation 2", t_ref, t_omp, ref_out, omp_out);
  }
  {
    const index_t batch = 400, len = 25, d = 16;
    const auto kv = random_values(batch * len * d, rng);
    const auto qv = random_values(batch * len * d, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(batch * len * len));
    std::vector<double> omp_out(ref_out.size());
    const double scale = 0.25;
    const double t_ref = time_best_ms(
        [&] { k::ref::attention_scores_forward(batch, len, d, kv.data(), qv.data(), scale, ref_out.data()); },
        reps);
    const double t_omp = time_best_ms(
        [&] { k::attention_scores_forward(batch, len, d, kv.data(), qv.data(), scale, omp_out.data()); },
        reps);
    report("attention_scores", t_ref, t_omp, ref_out, omp_out);
  }
  {
    const index_t batch = 400, rows = 25, cols = 25, d = 16;
    const auto m = random_values(batch * rows * cols, rng);
    const auto v = random_values(batch * cols * d, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(batch * rows * d));
    std::vector<double> omp_out(ref_out.size());
    const double t_ref = time_best_ms(
        [&] { k::ref::attention_apply_forward(batch, rows, cols, d, m.data(), v.data(), ref_out.data()); },
        reps);
    const double t_omp = time_best_ms(
        [&] { k::attention_apply_forward(batch, rows, cols, d, m.data(), v.data(), omp_out.data()); },
        reps);
    report("attention_apply", t_ref, t_omp, ref_out, omp_out);
  }
  {
    const index_t rows = 10000, c = 64;
    const auto x = random_values(rows * c, rng);
    const auto gain = random_values(c, rng);
    const auto bias = random_values(c, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(rows * c)), ref_xhat(ref_out.size());
    std::vector<double> omp_out(ref_out.size()), omp_xhat(ref_out.size());
    std::vector<double> ref_inv(static_cast<std::size_t>(rows)), omp_inv(ref_inv.size());
    const double t_ref = time_best_ms(
        [&] {
          k::ref::layernorm_forward(rows, c, x.data(), gain.data(), bias.data(), 1e-5,
                                    ref_out.data(), ref_xhat.data(), ref_inv.data());
        },
        reps);
    const double t_omp = time_best_ms(
        [&] {
          k::layernorm_forward(rows, c, x.data(), gain.data(), bias.data(), 1e-5,
                               omp_out.data(), omp_xhat.data(), omp_inv.data());
        },
        reps);
    report("layernorm", t_ref, t_omp, ref_out, omp_out);
  }
  {
    const index_t rows = 10000, c = 25;
    const auto x = random_values(rows * c, rng);
    std::vector<double> ref_out(static_cast<std::size_t>(rows * c));
    std::vector<double> omp_out(ref_out.size());
    const double t_ref = time_best_ms(
        [&] { k::ref::softmax_forward(rows, c, x.data(), ref_out.data()); }, reps);
    const double t_omp = time_best_ms(
        [&] { k::softmax_forward(rows, c, x.data(), omp_out.data()); }, reps);
    report("softmax", t_ref, t_omp, ref_out, omp_out);
  }

  if (g_mismatches) {
    std::printf("%d kernel(s) diverged from the reference\n", g_mismatches);
    return 1;
  }
  return 0;
}
