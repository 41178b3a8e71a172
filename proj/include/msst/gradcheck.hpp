#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "msst/tensor.hpp"

namespace msst {

struct FdOptions {
  double h = 1e-5;
  index_t max_coords = 24; // per tensor; sampled when the tensor is larger
  std::uint64_t seed = 7;
};

struct FdResult {
  double max_rel_err = 0.0;
  index_t coords_checked = 0;
};

// Central-difference check of tape gradients for a scalar-valued function.
// f is re-evaluated as wrt coordinates are perturbed in place; it must be
// deterministic (verified by double evaluation; mismatch throws). Relative
// error uses denominator max(|analytic|, |numeric|, 1e-8).
FdResult finite_difference_check(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& wrt,
                                 const FdOptions& opt = {});

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// The full suite: every differentiable primitive, both attention heads, the
// multi-scale blocks, and the end-to-end toy model. Logs one line per case
// when log is given; returns all results.
std::vector<GradCheckCase> gradcheck_suite(std::ostream* log);

bool gradcheck_passed(const std::vector<GradCheckCase>& cases);

} // namespace msst
