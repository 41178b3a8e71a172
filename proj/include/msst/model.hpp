#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "msst/attention.hpp"
#include "msst/graph.hpp"
#include "msst/multiscale.hpp"
#include "msst/tensor.hpp"

namespace msst {

struct ModelConfig {
  index_t layers = 9;
  index_t base_channel = 64;
  index_t heads = 3;
  index_t num_classes = 2;
  index_t frames = 64;
  index_t joints = 0;       // set from the graph
  index_t in_channels = 3;
  double noise_std = 1.0;

  // Three blocks each at base, 2*base, 4*base.
  std::vector<index_t> channel_schedule() const;
  index_t out_channels() const { return 4 * base_channel; }
  void validate() const; // throws on inconsistent settings
};

// Ordered name -> tensor map; iteration order is creation order and defines
// the checkpoint layout.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, shape_t shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  index_t total_size() const;
  void zero_grads();
  std::vector<Tensor> all();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

// Stream fusion: z1 + alpha ⊙ z2, plus N(0, noise_std^2) noise while training.
Tensor fuse_streams(const Tensor& z1, const Tensor& z2, const Tensor& alpha,
                    double noise_std, bool training, Rng* rng);

// Affine classifier head: logits = z W + b.
Tensor classify(const Tensor& z, const Tensor& weight, const Tensor& bias);

// The full two-stream network. Stream 1 runs spatial attention (with
// adaptive topology) followed by multi-scale temporal convolution in a
// [B,T,N,C] layout; stream 2 runs temporal attention followed by
// multi-scale spatial convolution in [B,N,T,C].
class MsstModel {
 public:
  MsstModel(const ModelConfig& cfg, const GraphSpec& graph, std::uint64_t init_seed);

  // x: [B, T, N, C] -> logits [B, num_classes].
  Tensor forward(const Tensor& x, bool training, Rng* noise_rng,
                 AttentionTrace* trace = nullptr);

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  Tensor stream_forward(const Tensor& h0, int stream, AttentionTrace* trace);
  AttentionParams attention_params(int layer, int stream) const;
  MsConvParams conv_params(int layer, int stream) const;

  ModelConfig cfg_;
  ParameterStore store_;
};

} // namespace msst
