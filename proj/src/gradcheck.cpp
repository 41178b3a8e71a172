#include "msst/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "msst/attention.hpp"
#include "msst/graph.hpp"
#include "msst/model.hpp"
#include "msst/multiscale.hpp"

namespace msst {

FdResult finite_difference_check(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& wrt,
                                 const FdOptions& opt) {
  if (wrt.empty())
    throw std::runtime_error("finite_difference_check: no tensors to check");

  auto eval = [&f]() {
    Tensor out = f();
    if (out.size() != 1)
      throw std::runtime_error("finite_difference_check: f must be scalar-valued, got " +
                               shape_str(out.shape()));
    return out.values()[0];
  };

  // nondeterminism would invalidate every difference below
  const double base = eval();
  if (eval() != base)
    throw std::runtime_error(
        "finite_difference_check: f is not deterministic (two evaluations differ)");

  // analytic gradients from one taped evaluation
  for (const Tensor& t : wrt) t.node()->zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = f();
    if (loss.size() != 1)
      throw std::runtime_error("finite_difference_check: f must be scalar-valued");
    backward(tape, loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    const auto& g = t.node()->grad;
    analytic.push_back(g.empty() ? std::vector<double>(static_cast<std::size_t>(t.size()), 0.0)
                                 : g);
  }

  Rng rng(opt.seed);
  FdResult result;
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    Tensor t = wrt[w];
    std::vector<index_t> coords;
    if (t.size() <= opt.max_coords) {
      for (index_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      const std::vector<index_t> perm = rng.permutation(t.size());
      coords.assign(perm.begin(), perm.begin() + opt.max_coords);
    }
    for (index_t c : coords) {
      double& slot = t.values()[static_cast<std::size_t>(c)];
      const double saved = slot;
      slot = saved + opt.h;
      const double fp = eval();
      slot = saved - opt.h;
      const double fm = eval();
      slot = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[w][static_cast<std::size_t>(c)];
      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      if (rel > result.max_rel_err) result.max_rel_err = rel;
      ++result.coords_checked;
    }
  }
  return result;
}

namespace {

Tensor sumsq(const Tensor& x) { return ops::sum_all(ops::mul(x, x)); }

Tensor filled(shape_t shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), true);
  rng.fill_uniform(t, lo, hi);
  return t;
}

// keep piecewise-linear ops away from their kinks so central differences
// see a single linear piece
void nudge_from_zero(Tensor& t) {
  for (double& v : t.values())
    if (std::fabs(v) < 0.02) v += v >= 0.0 ? 0.05 : -0.05;
}

struct CaseRunner {
  std::vector<GradCheckCase> cases;
  std::ostream* log = nullptr;

  void run(const std::string& name, double tolerance,
           const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
           FdOptions opt = {}) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tolerance;
    const FdResult r = finite_difference_check(f, wrt, opt);
    c.max_rel_err = r.max_rel_err;
    c.passed = r.max_rel_err < tolerance;
    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-28s max_rel_err %.3e  tol %.0e  %s\n",
                    name.c_str(), c.max_rel_err, c.tolerance,
                    c.passed ? "ok" : "FAIL");
      *log << line;
    }
    cases.push_back(std::move(c));
  }
};

} // namespace

std::vector<GradCheckCase> gradcheck_suite(std::ostream* log) {
  CaseRunner runner;
  runner.log = log;
  const double tol = 1e-5;

  {
    Rng rng(101);
    Tensor a = filled({3, 4}, rng), b = filled({4}, rng);
    runner.run("add broadcast", tol, [&] { return sumsq(ops::add(a, b)); }, {a, b});
  }
  {
    Rng rng(102);
    Tensor a = filled({3, 4}, rng), b = filled({4}, rng);
    runner.run("mul broadcast", tol, [&] { return sumsq(ops::mul(a, b)); }, {a, b});
  }
  {
    Rng rng(103);
    Tensor x = filled({5}, rng);
    runner.run("scale", tol, [&] { return sumsq(ops::scale(x, 1.7)); }, {x});
  }
  {
    Rng rng(104);
    Tensor x = filled({12}, rng);
    nudge_from_zero(x);
    runner.run("relu", tol, [&] { return sumsq(ops::relu(x)); }, {x});
  }
  {
    Rng rng(105);
    Tensor a = filled({2, 3, 4}, rng), b = filled({4, 5}, rng);
    runner.run("matmul shared rhs", tol, [&] { return sumsq(ops::matmul(a, b)); },
               {a, b});
  }
  {
    Rng rng(106);
    Tensor a = filled({2, 3, 4}, rng), b = filled({2, 4, 5}, rng);
    runner.run("matmul batched rhs", tol, [&] { return sumsq(ops::matmul(a, b)); },
               {a, b});
  }
  {
    Rng rng(107);
    Tensor x = filled({2, 3, 4}, rng);
    runner.run("permute", tol, [&] { return sumsq(ops::permute(x, {2, 0, 1})); }, {x});
  }
  {
    Rng rng(108);
    Tensor x = filled({3, 4}, rng);
    runner.run("reshape", tol, [&] { return sumsq(ops::reshape(x, {2, 6})); }, {x});
  }
  {
    Rng rng(109);
    Tensor a = filled({2, 3}, rng), b = filled({2, 2}, rng), c = filled({2, 4}, rng);
    runner.run("concat channels", tol,
               [&] { return sumsq(ops::concat_last({a, b, c})); }, {a, b, c});
  }
  {
    Rng rng(110);
    Tensor x = filled({3, 5}, rng);
    runner.run("softmax rows", tol, [&] { return sumsq(ops::softmax_rows(x)); }, {x});
  }
  {
    Rng rng(111);
    Tensor k = filled({2, 4, 3}, rng), q = filled({2, 4, 3}, rng);
    const double scale = 1.0 / std::sqrt(3.0);
    runner.run("attention scores", tol,
               [&] { return sumsq(ops::attention_scores(k, q, scale)); }, {k, q});
  }
  {
    Rng rng(112);
    Tensor m = filled({2, 3, 4}, rng), v = filled({2, 4, 5}, rng);
    runner.run("attention apply", tol,
               [&] { return sumsq(ops::attention_apply(m, v)); }, {m, v});
  }
  {
    Rng rng(113);
    Tensor x = filled({2, 6, 3, 4}, rng), w = filled({3, 4, 2}, rng);
    runner.run("conv dilation 1", tol,
               [&] { return sumsq(ops::dilated_conv_axis(x, w, 1, 1)); }, {x, w});
  }
  {
    Rng rng(114);
    Tensor x = filled({2, 3, 6, 4}, rng), w = filled({3, 4, 2}, rng);
    runner.run("conv dilation 2", tol,
               [&] { return sumsq(ops::dilated_conv_axis(x, w, 2, 2)); }, {x, w});
  }
  {
    Rng rng(115);
    Tensor x = filled({2, 7, 3}, rng);
    runner.run("maxpool", tol, [&] { return sumsq(ops::maxpool_axis(x, 1, 3)); }, {x});
  }
  {
    Rng rng(116);
    Tensor x = filled({4, 6}, rng), gain = filled({6}, rng, 0.5, 1.5),
           bias = filled({6}, rng);
    runner.run("layer norm", tol,
               [&] { return sumsq(ops::layer_norm(x, gain, bias)); }, {x, gain, bias});
  }
  {
    Rng rng(117);
    Tensor x = filled({2, 3, 4, 5}, rng);
    runner.run("global average pool", tol,
               [&] { return sumsq(ops::global_average_pool(x)); }, {x});
  }
  {
    Rng rng(118);
    Tensor logits = filled({4, 5}, rng, -2.0, 2.0);
    const std::vector<index_t> labels{1, 0, 3, 2};
    runner.run("cross entropy", 1e-6,
               [&] { return ops::cross_entropy_mean(logits, labels); }, {logits});
  }
  {
    Rng rng(119);
    Tensor h = filled({3, 4}, rng);
    Tensor wq = filled({4, 2}, rng), wk = filled({4, 2}, rng), wv = filled({4, 2}, rng);
    Tensor topo = filled({3, 3}, rng, 0.1, 1.0);
    runner.run("spatial attention head", tol,
               [&] { return sumsq(ssa_gc_head(h, wq, wk, wv, topo)); },
               {h, wq, wk, wv, topo});
  }
  {
    Rng rng(120);
    Tensor h = filled({5, 4}, rng);
    Tensor wq = filled({4, 2}, rng), wk = filled({4, 2}, rng), wv = filled({4, 2}, rng);
    runner.run("temporal attention head", tol,
               [&] { return sumsq(tsa_head(h, wq, wk, wv)); }, {h, wq, wk, wv});
  }
  {
    Rng rng(121);
    Tensor h = filled({2, 3, 6}, rng);
    AttentionParams params;
    std::vector<Tensor> wrt{h};
    for (int m = 0; m < 2; ++m) {
      HeadParams hp;
      hp.wq = filled({6, 3}, rng);
      hp.wk = filled({6, 3}, rng);
      hp.wv = filled({6, 3}, rng);
      hp.topo = filled({3, 3}, rng, 0.1, 1.0);
      wrt.insert(wrt.end(), {hp.wq, hp.wk, hp.wv, hp.topo});
      params.heads.push_back(std::move(hp));
    }
    params.wo = filled({6, 8}, rng);
    wrt.push_back(params.wo);
    runner.run("multi-head attention", tol,
               [&] {
                 return sumsq(multi_head_attention(h, h, params, nullptr, 1, "spatial"));
               },
               wrt);
  }
  {
    Rng rng(122);
    Tensor x = filled({2, 5, 3, 8}, rng);
    MsConvParams p;
    p.b1_pw = filled({8, 2}, rng);
    p.b1_w = filled({5, 2, 2}, rng);
    p.b2_pw = filled({8, 2}, rng);
    p.b2_w = filled({5, 2, 2}, rng);
    p.b3_pw = filled({8, 2}, rng);
    p.b4_pw = filled({8, 2}, rng);
    MsConvConfig cfg;
    runner.run("multi-scale conv block", tol,
               [&] { return sumsq(ms_conv_forward(x, p, cfg)); },
               {x, p.b1_pw, p.b1_w, p.b2_pw, p.b2_w, p.b3_pw, p.b4_pw});
  }
  {
    Rng rng(123);
    Tensor z1 = filled({2, 6}, rng), z2 = filled({2, 6}, rng), alpha = filled({6}, rng);
    runner.run("stream fusion", tol,
               [&] { return sumsq(fuse_streams(z1, z2, alpha, 0.0, true, nullptr)); },
               {z1, z2, alpha});
  }
  {
    Rng rng(124);
    Tensor z = filled({3, 4}, rng), w = filled({4, 2}, rng), b = filled({2}, rng);
    runner.run("classifier head", tol, [&] { return sumsq(classify(z, w, b)); },
               {z, w, b});
  }
  {
    const GraphSpec graph = build_graph({-1, 0, 1}, "chain3");
    ModelConfig cfg;
    cfg.base_channel = 8;
    cfg.heads = 2;
    cfg.num_classes = 2;
    cfg.frames = 8;
    cfg.in_channels = 3;
    cfg.noise_std = 0.0;
    MsstModel model(cfg, graph, 2024);
    Rng rng(125);
    Tensor x({2, 8, 3, 3});
    rng.fill_uniform(x, -1.0, 1.0);
    const std::vector<index_t> labels{0, 1};
    FdOptions opt;
    opt.max_coords = 6;
    runner.run("model end-to-end toy", 1e-4,
               [&] {
                 return ops::cross_entropy_mean(model.forward(x, false, nullptr), labels);
               },
               model.params().all(), opt);
  }

  return runner.cases;
}

bool gradcheck_passed(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases)
    if (!c.passed) return false;
  return true;
}

} // namespace msst
