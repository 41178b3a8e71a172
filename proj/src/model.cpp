#include "msst/model.hpp"

#include <cmath>
#include <stdexcept>

namespace msst {

std::vector<index_t> ModelConfig::channel_schedule() const {
  std::vector<index_t> sched(static_cast<std::size_t>(layers));
  const index_t third = layers / 3;
  for (index_t l = 0; l < layers; ++l)
    sched[static_cast<std::size_t>(l)] = base_channel << (l / third);
  return sched;
}

void ModelConfig::validate() const {
  if (layers < 3 || layers % 3 != 0)
    throw std::runtime_error("config: layers must be a positive multiple of 3, got " +
                             std::to_string(layers));
  if (base_channel < 4 || base_channel % 4 != 0)
    throw std::runtime_error("config: base_channel must be a positive multiple of 4 "
                             "(four conv branches), got " + std::to_string(base_channel));
  if (heads < 1 || base_channel % heads != 0)
    throw std::runtime_error("config: heads must divide base_channel; got heads=" +
                             std::to_string(heads) + " with base_channel=" +
                             std::to_string(base_channel));
  if (num_classes < 2)
    throw std::runtime_error("config: need at least 2 classes");
  if (frames < 2) throw std::runtime_error("config: frames must be at least 2");
  if (joints < 1) throw std::runtime_error("config: joints not set");
  if (in_channels < 2)
    throw std::runtime_error("config: in_channels must be at least 2");
  if (noise_std < 0.0)
    throw std::runtime_error("config: noise_std must be nonnegative");
}

Tensor& ParameterStore::create(const std::string& name, shape_t shape) {
  if (map_.count(name))
    throw std::runtime_error("parameter '" + name + "' already exists");
  order_.push_back(name);
  auto [it, ok] = map_.emplace(name, Tensor(std::move(shape), true));
  (void)ok;
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("unknown parameter '" + name + "'");
  return it->second;
}

bool ParameterStore::has(const std::string& name) const { return map_.count(name) != 0; }

index_t ParameterStore::total_size() const {
  index_t total = 0;
  for (const auto& name : order_) total += map_.at(name).size();
  return total;
}

void ParameterStore::zero_grads() {
  for (const auto& name : order_) map_.at(name).node()->zero_grad();
}

std::vector<Tensor> ParameterStore::all() {
  std::vector<Tensor> out;
  out.reserve(order_.size());
  for (const auto& name : order_) out.push_back(map_.at(name));
  return out;
}

Tensor fuse_streams(const Tensor& z1, const Tensor& z2, const Tensor& alpha,
                    double noise_std, bool training, Rng* rng) {
  if (z1.shape() != z2.shape())
    throw std::runtime_error("fuse_streams: stream shapes differ (" +
                             shape_str(z1.shape()) + " vs " + shape_str(z2.shape()) + ")");
  const index_t c = z1.dim(z1.rank() - 1);
  if (alpha.rank() != 1 || alpha.dim(0) != c)
    throw std::runtime_error("fuse_streams: alpha must have length " + std::to_string(c) +
                             ", got " + shape_str(alpha.shape()));
  Tensor fused = ops::add(z1, ops::mul(z2, alpha));
  if (training && noise_std > 0.0) {
    if (!rng)
      throw std::runtime_error("fuse_streams: rng required for training-time noise");
    Tensor noise(z1.shape());
    rng->fill_normal(noise, 0.0, noise_std);
    fused = ops::add(fused, noise);
  }
  return fused;
}

Tensor classify(const Tensor& z, const Tensor& weight, const Tensor& bias) {
  if (z.dim(z.rank() - 1) != weight.dim(0))
    throw std::runtime_error("classify: feature width " +
                             std::to_string(z.dim(z.rank() - 1)) +
                             " does not match classifier rows " +
                             std::to_string(weight.dim(0)));
  return ops::add(ops::matmul(z, weight), bias);
}

namespace {

// Per-position channel map: flatten positions, multiply, restore.
Tensor pointwise_map(const Tensor& x, const Tensor& w) {
  const index_t c_in = x.dim(x.rank() - 1);
  Tensor flat = ops::reshape(x, {x.size() / c_in, c_in});
  Tensor mapped = ops::matmul(flat, w);
  shape_t out_shape = x.shape();
  out_shape.back() = w.dim(1);
  return ops::reshape(mapped, std::move(out_shape));
}

std::string pname(index_t layer, int stream, const std::string& leaf) {
  return "L" + std::to_string(layer) + ".s" + std::to_string(stream) + "." + leaf;
}

} // namespace

MsstModel::MsstModel(const ModelConfig& cfg, const GraphSpec& graph,
                     std::uint64_t init_seed)
    : cfg_(cfg) {
  if (cfg_.joints != 0 && cfg_.joints != graph.joints)
    throw std::runtime_error("config: joints=" + std::to_string(cfg_.joints) +
                             " does not match graph with " +
                             std::to_string(graph.joints) + " joints");
  cfg_.joints = graph.joints;
  cfg_.validate();

  Rng rng(init_seed);
  auto uniform_fan_in = [&rng](Tensor& t, index_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng.fill_uniform(t, -bound, bound);
  };

  Tensor& ew = store_.create("embed.w", {cfg_.in_channels, cfg_.base_channel});
  uniform_fan_in(ew, cfg_.in_channels);
  // Nonzero bias keeps the channel variance of every embedded position away
  // from zero even for all-zero input frames (the motion modalities zero the
  // final frame); without the floor, layer-norm backward at such positions is
  // amplified by 1/sqrt(eps) and the first optimizer steps destroy the
  // embedding.
  uniform_fan_in(store_.create("embed.b", {cfg_.base_channel}), cfg_.in_channels);

  const auto sched = cfg_.channel_schedule();
  const std::vector<double> topo_init =
      normalize_adjacency(graph.adjacency, graph.joints);
  for (int s = 1; s <= 2; ++s) {
    const index_t attn_len = s == 1 ? cfg_.joints : cfg_.frames;
    for (index_t l = 1; l <= cfg_.layers; ++l) {
      const index_t ci = l == 1 ? cfg_.base_channel : sched[static_cast<std::size_t>(l - 2)];
      const index_t co = sched[static_cast<std::size_t>(l - 1)];
      const index_t d_head = ci / cfg_.heads;

      Tensor& pe = store_.create(pname(l, s, "pe"), {attn_len, ci});
      rng.fill_normal(pe, 0.0, 0.02);
      for (index_t m = 1; m <= cfg_.heads; ++m) {
        const std::string head = "head" + std::to_string(m);
        uniform_fan_in(store_.create(pname(l, s, head + ".wq"), {ci, d_head}), ci);
        uniform_fan_in(store_.create(pname(l, s, head + ".wk"), {ci, d_head}), ci);
        uniform_fan_in(store_.create(pname(l, s, head + ".wv"), {ci, d_head}), ci);
        if (s == 1) {
          Tensor& topo =
              store_.create(pname(l, s, head + ".topo"), {cfg_.joints, cfg_.joints});
          topo.values() = topo_init;
        }
      }
      uniform_fan_in(store_.create(pname(l, s, "wo"), {ci, co}), ci);
      if (ci != co) uniform_fan_in(store_.create(pname(l, s, "res"), {ci, co}), ci);
      store_.create(pname(l, s, "norm1.gain"), {co}).values().assign(
          static_cast<std::size_t>(co), 1.0);
      store_.create(pname(l, s, "norm1.bias"), {co});

      const index_t quarter = co / 4;
      for (int b = 1; b <= 2; ++b) {
        const std::string branch = "branch" + std::to_string(b);
        uniform_fan_in(store_.create(pname(l, s, branch + ".pw"), {co, quarter}), co);
        uniform_fan_in(store_.create(pname(l, s, branch + ".w"), {5, quarter, quarter}),
                       5 * quarter);
      }
      uniform_fan_in(store_.create(pname(l, s, "branch3.pw"), {co, quarter}), co);
      uniform_fan_in(store_.create(pname(l, s, "branch4.pw"), {co, quarter}), co);
      store_.create(pname(l, s, "norm2.gain"), {co}).values().assign(
          static_cast<std::size_t>(co), 1.0);
      store_.create(pname(l, s, "norm2.bias"), {co});
    }
  }

  store_.create("fuse.alpha", {cfg_.out_channels()});
  Tensor& fcw = store_.create("fc.w", {cfg_.out_channels(), cfg_.num_classes});
  uniform_fan_in(fcw, cfg_.out_channels());
  store_.create("fc.b", {cfg_.num_classes});
}

AttentionParams MsstModel::attention_params(int layer, int stream) const {
  AttentionParams p;
  for (index_t m = 1; m <= cfg_.heads; ++m) {
    const std::string head = "head" + std::to_string(m);
    HeadParams hp;
    hp.wq = store_.get(pname(layer, stream, head + ".wq"));
    hp.wk = store_.get(pname(layer, stream, head + ".wk"));
    hp.wv = store_.get(pname(layer, stream, head + ".wv"));
    if (stream == 1) hp.topo = store_.get(pname(layer, stream, head + ".topo"));
    p.heads.push_back(std::move(hp));
  }
  p.wo = store_.get(pname(layer, stream, "wo"));
  return p;
}

MsConvParams MsstModel::conv_params(int layer, int stream) const {
  MsConvParams p;
  p.b1_pw = store_.get(pname(layer, stream, "branch1.pw"));
  p.b1_w = store_.get(pname(layer, stream, "branch1.w"));
  p.b2_pw = store_.get(pname(layer, stream, "branch2.pw"));
  p.b2_w = store_.get(pname(layer, stream, "branch2.w"));
  p.b3_pw = store_.get(pname(layer, stream, "branch3.pw"));
  p.b4_pw = store_.get(pname(layer, stream, "branch4.pw"));
  return p;
}

Tensor MsstModel::stream_forward(const Tensor& h0, int stream, AttentionTrace* trace) {
  const std::string kind = stream == 1 ? "spatial" : "temporal";
  const index_t batch = h0.dim(0);
  const index_t l1 = h0.dim(1); // convolution axis (time for stream 1, joints for 2)
  const index_t l2 = h0.dim(2); // attention axis
  MsConvConfig conv_cfg; // axis 1, kernel 5, dilations 1/2, pool 3

  Tensor h = h0;
  for (index_t l = 1; l <= cfg_.layers; ++l) {
    const index_t ci = h.dim(3);
    // attention sub-block: position encoding feeds queries/keys only
    Tensor h_pe = add_positional(h, store_.get(pname(l, stream, "pe")));
    Tensor qk_flat = ops::reshape(h_pe, {batch * l1, l2, ci});
    Tensor v_flat = ops::reshape(h, {batch * l1, l2, ci});
    Tensor attn = multi_head_attention(qk_flat, v_flat, attention_params(l, stream),
                                       trace, static_cast<int>(l), kind);
    const index_t co = attn.dim(2);
    attn = ops::reshape(attn, {batch, l1, l2, co});
    Tensor res = ci == co ? h : pointwise_map(h, store_.get(pname(l, stream, "res")));
    Tensor y1 = ops::layer_norm(ops::add(attn, res),
                                store_.get(pname(l, stream, "norm1.gain")),
                                store_.get(pname(l, stream, "norm1.bias")));
    // multi-scale convolution sub-block with identity residual
    Tensor conv = ms_conv_forward(y1, conv_params(l, stream), conv_cfg);
    h = ops::layer_norm(ops::add(conv, y1),
                        store_.get(pname(l, stream, "norm2.gain")),
                        store_.get(pname(l, stream, "norm2.bias")));
  }
  return ops::global_average_pool(h);
}

Tensor MsstModel::forward(const Tensor& x, bool training, Rng* noise_rng,
                          AttentionTrace* trace) {
  if (x.rank() != 4 || x.dim(1) != cfg_.frames || x.dim(2) != cfg_.joints ||
      x.dim(3) != cfg_.in_channels)
    throw std::runtime_error("forward: expected input [B, " +
                             std::to_string(cfg_.frames) + ", " +
                             std::to_string(cfg_.joints) + ", " +
                             std::to_string(cfg_.in_channels) + "], got " +
                             shape_str(x.shape()));
  const index_t batch = x.dim(0);

  Tensor flat = ops::reshape(x, {x.size() / cfg_.in_channels, cfg_.in_channels});
  Tensor emb = ops::add(ops::matmul(flat, store_.get("embed.w")), store_.get("embed.b"));
  Tensor h0 =
      ops::reshape(emb, {batch, cfg_.frames, cfg_.joints, cfg_.base_channel});

  Tensor z1 = stream_forward(h0, 1, trace);
  Tensor z2 = stream_forward(ops::permute(h0, {0, 2, 1, 3}), 2, trace);
  Tensor z = fuse_streams(z1, z2, store_.get("fuse.alpha"), cfg_.noise_std, training,
                          noise_rng);
  return classify(z, store_.get("fc.w"), store_.get("fc.b"));
}

} // namespace msst
