#pragma once

#include "msst/tensor.hpp"

namespace msst {

// Four-branch multi-scale convolution block. Output channel layout is
// [conv d=1 | conv d=2 | maxpool | residual], each C_out/4 wide.
// pw weights are pointwise channel maps [C_in, C_out/4]; conv weights are
// [kernel, C_out/4, C_out/4].
struct MsConvParams {
  Tensor b1_pw, b1_w;
  Tensor b2_pw, b2_w;
  Tensor b3_pw;
  Tensor b4_pw;
};

struct MsConvConfig {
  int axis = 1;            // tensor axis the convolution/pool runs along
  index_t kernel = 5;
  index_t dilation1 = 1;
  index_t dilation2 = 2;
  index_t pool_window = 3;
};

// x: channels-last tensor, convolved along cfg.axis; the two conv branches
// end in ReLU, the pool and residual branches do not.
Tensor ms_conv_forward(const Tensor& x, const MsConvParams& params,
                       const MsConvConfig& cfg);

} // namespace msst
