#include "selrank/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace selrank {

GradCheckResult gradient_check(const std::function<Tensor()>& build_loss,
                               ParameterStore& params, double eps,
                               SeededRng& pick_rng, int max_coords_per_param) {
  if (!(eps > 0.0 && eps <= 1e-3))
    throw std::invalid_argument("gradient_check: eps must lie in (0, 1e-3]");

  GradCheckResult result;
  params.zero_grads();
  Tensor loss = build_loss();
  if (!std::isfinite(loss.item())) return result;
  backward(loss);

  std::map<std::string, Mat> analytic;
  for (const auto& [name, t] : params) {
    analytic[name] =
        t.has_grad() ? t.grad() : Mat::Zero(t.rows(), t.cols()).eval();
    if (!analytic[name].allFinite()) return result;
  }

  result.ok = true;
  for (auto& [name, t] : params) {
    const Index total = t.size();
    std::vector<Index> coords;
    if (total <= max_coords_per_param) {
      for (Index i = 0; i < total; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<Index>(
            pick_rng.below(static_cast<std::uint64_t>(total))));
    }
    Mat& value = t.mutable_value();
    for (Index flat : coords) {
      const Index r = flat / t.cols();
      const Index c = flat % t.cols();
      const double saved = value(r, c);
      value(r, c) = saved + eps;
      const double up = build_loss().item();
      value(r, c) = saved - eps;
      const double down = build_loss().item();
      value(r, c) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.ok = false;
        return result;
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[name](r, c);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      result.max_rel_err = std::max(result.max_rel_err, rel);
    }
  }
  params.zero_grads();
  return result;
}

}  // namespace selrank
