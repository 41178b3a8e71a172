#include <doctest.h>

#include <vector>

#include "msst/multiscale.hpp"
#include "test_util.hpp"

using namespace msst;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

MsConvParams random_params(Rng& rng, index_t c_in, index_t c_out) {
  const index_t q = c_out / 4;
  MsConvParams p;
  p.b1_pw = random_tensor(rng, {c_in, q});
  p.b1_w = random_tensor(rng, {5, q, q});
  p.b2_pw = random_tensor(rng, {c_in, q});
  p.b2_w = random_tensor(rng, {5, q, q});
  p.b3_pw = random_tensor(rng, {c_in, q});
  p.b4_pw = random_tensor(rng, {c_in, q});
  return p;
}

// Pointwise channel map via reshape + matmul, the same composition the block
// uses internally.
Tensor pointwise(const Tensor& x, const Tensor& w) {
  shape_t flat{numel(x.shape()) / x.dim(x.rank() - 1), x.dim(x.rank() - 1)};
  shape_t out_shape = x.shape();
  out_shape.back() = w.dim(1);
  return ops::reshape(ops::matmul(ops::reshape(x, flat), w), out_shape);
}

} // namespace

TEST_CASE("the block output is the concatenation of its four branches") {
  Rng rng(71);
  const index_t B = 2, T = 8, N = 3, Ci = 6, Co = 8;
  Tensor x = random_tensor(rng, {B, T, N, Ci});
  MsConvParams p = random_params(rng, Ci, Co);
  MsConvConfig cfg;

  Tensor y = ms_conv_forward(x, p, cfg);
  REQUIRE(y.shape() == shape_t{B, T, N, Co});

  Tensor b1 = ops::relu(ops::dilated_conv_axis(pointwise(x, p.b1_pw), p.b1_w, 1, 1));
  Tensor b2 = ops::relu(ops::dilated_conv_axis(pointwise(x, p.b2_pw), p.b2_w, 1, 2));
  Tensor b3 = ops::maxpool_axis(pointwise(x, p.b3_pw), 1, 3);
  Tensor b4 = pointwise(x, p.b4_pw);
  Tensor manual = ops::concat_last({b1, b2, b3, b4});
  CHECK(bitwise_equal(y.values(), manual.values()));
}

TEST_CASE("zeroing one branch silences exactly its quarter of the channels") {
  Rng rng(72);
  const index_t B = 1, T = 6, N = 2, Ci = 4, Co = 8, q = Co / 4;
  Tensor x = random_tensor(rng, {B, T, N, Ci});
  MsConvParams p = random_params(rng, Ci, Co);
  p.b2_pw = Tensor(shape_t{Ci, q}); // zeros
  p.b2_w = Tensor(shape_t{5, q, q});

  Tensor y = ms_conv_forward(x, p, MsConvConfig{});
  bool other_nonzero = false;
  for (index_t b = 0; b < B; ++b)
    for (index_t t = 0; t < T; ++t)
      for (index_t n = 0; n < N; ++n)
        for (index_t c = 0; c < Co; ++c) {
          const double v = y.at({b, t, n, c});
          if (c >= q && c < 2 * q)
            CHECK(v == 0.0); // the dilation-2 branch occupies the second slot
          else if (v != 0.0)
            other_nonzero = true;
        }
  CHECK(other_nonzero);
}

TEST_CASE("frame-constant input stays frame-constant away from the boundary") {
  Rng rng(73);
  const index_t T = 12, N = 2, Ci = 4, Co = 8;
  Tensor frame = random_tensor(rng, {1, 1, N, Ci});
  Tensor x(shape_t{1, T, N, Ci});
  for (index_t t = 0; t < T; ++t)
    std::copy(frame.values().begin(), frame.values().end(),
              x.values().begin() + t * N * Ci);
  MsConvParams p = random_params(rng, Ci, Co);
  Tensor y = ms_conv_forward(x, p, MsConvConfig{});

  // Kernel 5 with dilation 2 reaches 4 frames out, so frames 4..T-5 see a
  // full window everywhere and must be identical.
  for (index_t t = 5; t < T - 4; ++t)
    for (index_t n = 0; n < N; ++n)
      for (index_t c = 0; c < Co; ++c)
        CHECK(y.at({0, t, n, c}) == y.at({0, 4, n, c}));
}

TEST_CASE("the convolution axis is configurable") {
  Rng rng(74);
  const index_t B = 1, T = 4, N = 7, Ci = 4, Co = 4;
  Tensor x = random_tensor(rng, {B, T, N, Ci});
  MsConvParams p = random_params(rng, Ci, Co);
  MsConvConfig cfg;
  cfg.axis = 2;

  Tensor y = ms_conv_forward(x, p, cfg);
  REQUIRE(y.shape() == shape_t{B, T, N, Co});

  // Convolving axis 2 directly equals permuting joints to the front,
  // convolving axis 1, and permuting back.
  MsConvConfig swapped;
  swapped.axis = 1;
  Tensor via_permute = ops::permute(
      ms_conv_forward(ops::permute(x, {0, 2, 1, 3}), p, swapped), {0, 2, 1, 3});
  CHECK(bitwise_equal(y.values(), via_permute.values()));
}

TEST_CASE("block preserves every non-channel dimension") {
  Rng rng(75);
  Tensor x = random_tensor(rng, {3, 10, 5, 8});
  MsConvParams p = random_params(rng, 8, 16);
  Tensor y = ms_conv_forward(x, p, MsConvConfig{});
  CHECK(y.shape() == shape_t{3, 10, 5, 16});
}

TEST_CASE("mismatched branch widths are rejected") {
  Rng rng(76);
  Tensor x = random_tensor(rng, {1, 6, 2, 4});
  MsConvParams p = random_params(rng, 4, 8);
  p.b3_pw = random_tensor(rng, {4, 3}); // quarter width must match the others
  CHECK_THROWS_AS(ms_conv_forward(x, p, MsConvConfig{}), std::runtime_error);

  MsConvParams q = random_params(rng, 4, 8);
  q.b1_pw = random_tensor(rng, {5, 2}); // wrong input width
  CHECK_THROWS_AS(ms_conv_forward(x, q, MsConvConfig{}), std::runtime_error);
}
