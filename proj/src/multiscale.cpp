#include "msst/multiscale.hpp"

#include <stdexcept>

namespace msst {

namespace {

// Channel map applied at every position: flatten to [rows, C_in], multiply,
// restore the original leading dims.
Tensor pointwise(const Tensor& x, const Tensor& w) {
  const index_t c_in = x.dim(x.rank() - 1);
  if (w.rank() != 2 || w.dim(0) != c_in)
    throw std::runtime_error("ms_conv: pointwise weight must be [" +
                             std::to_string(c_in) + ", C], got " + shape_str(w.shape()));
  Tensor flat = ops::reshape(x, {x.size() / c_in, c_in});
  Tensor mapped = ops::matmul(flat, w);
  shape_t out_shape = x.shape();
  out_shape.back() = w.dim(1);
  return ops::reshape(mapped, std::move(out_shape));
}

} // namespace

Tensor ms_conv_forward(const Tensor& x, const MsConvParams& params,
                       const MsConvConfig& cfg) {
  if (x.rank() < 3)
    throw std::runtime_error("ms_conv: input must have at least 3 axes, got " +
                             shape_str(x.shape()));
  if (cfg.axis < 1 || cfg.axis >= x.rank() - 1)
    throw std::runtime_error("ms_conv: axis " + std::to_string(cfg.axis) +
                             " out of range for " + shape_str(x.shape()));
  const index_t quarter = params.b1_pw.dim(1);
  for (const Tensor* pw : {&params.b2_pw, &params.b3_pw, &params.b4_pw})
    if (pw->dim(1) != quarter)
      throw std::runtime_error("ms_conv: branch widths differ");

  Tensor c1 = ops::dilated_conv_axis(pointwise(x, params.b1_pw), params.b1_w,
                                     cfg.axis, cfg.dilation1);
  Tensor b1 = ops::relu(c1);
  Tensor c2 = ops::dilated_conv_axis(pointwise(x, params.b2_pw), params.b2_w,
                                     cfg.axis, cfg.dilation2);
  Tensor b2 = ops::relu(c2);
  Tensor b3 = ops::maxpool_axis(pointwise(x, params.b3_pw), cfg.axis, cfg.pool_window);
  Tensor b4 = pointwise(x, params.b4_pw);
  return ops::concat_last({b1, b2, b3, b4});
}

} // namespace msst
