#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "mdet/autodiff.hpp"

namespace mdet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares backward() gradients of a scalar loss against central finite
// differences, for every value of every parameter in `params`.
//
// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
// the floor keeps values that are zero up to rounding from dividing by ~0.
GradCheckResult grad_check(ParamStore& params, const std::function<Var(Graph&)>& loss_fn, double eps = 1e-5,
                           double floor = 1e-6);

}  // namespace mdet
