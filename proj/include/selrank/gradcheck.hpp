#pragma once

#include <functional>

#include "selrank/param_store.hpp"
#include "selrank/tensor.hpp"

namespace selrank {

struct GradCheckResult {
  bool ok = false;           // false when any value or gradient is non-finite
  double max_rel_err = 0.0;  // max |analytic - numeric| / max(1, |analytic|)
};

// Compares reverse-mode gradients of the scalar built by `build_loss`
// against central finite differences. The builder must be deterministic:
// any internal randomness has to be frozen so repeated evaluations see the
// same graph. Per parameter, at most `max_coords_per_param` coordinates are
// probed (all of them if the parameter is small), chosen via `pick_rng`.
GradCheckResult gradient_check(const std::function<Tensor()>& build_loss,
                               ParameterStore& params, double eps,
                               SeededRng& pick_rng,
                               int max_coords_per_param = 24);

}  // namespace selrank
