#include "selrank/subset_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace selrank {

double gumbel_noise(double u) {
  if (!(u > 0.0 && u < 1.0))
    throw std::invalid_argument("gumbel_noise: u must lie in (0, 1)");
  return -std::log(-std::log(u));
}

GumbelKeys draw_gumbel_keys(std::span<const double> logits, SeededRng& rng) {
  GumbelKeys out;
  out.uniforms.reserve(logits.size());
  out.noise.reserve(logits.size());
  out.keys.reserve(logits.size());
  for (double w : logits) {
    const double u = rng.uniform01();
    const double g = gumbel_noise(u);
    out.uniforms.push_back(u);
    out.noise.push_back(g);
    out.keys.push_back(w + g);
  }
  return out;
}

int gumbel_argmax_sample(std::span<const double> logits, SeededRng& rng) {
  if (logits.empty()) throw std::invalid_argument("gumbel_argmax_sample: empty");
  const GumbelKeys keys = draw_gumbel_keys(logits, rng);
  int best = 0;
  for (size_t i = 1; i < keys.keys.size(); ++i)
    if (keys.keys[i] > keys.keys[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

std::vector<int> hard_topk(std::span<const double> keys, int k) {
  if (k < 0 || static_cast<size_t>(k) > keys.size())
    throw std::invalid_argument("hard_topk: k out of range");
  std::vector<int> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return keys[static_cast<size_t>(a)] > keys[static_cast<size_t>(b)];
  });  // stable: equal keys keep index order, so ties go to the lower index
  order.resize(static_cast<size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

RelaxedSubset relaxed_topk(const Tensor& keys, int k, double temperature) {
  if (keys.rank() != 1)
    throw std::invalid_argument("relaxed_topk: keys must be a vector");
  const int n = static_cast<int>(keys.cols());
  if (k < 1 || k > n)
    throw std::invalid_argument("relaxed_topk: k must lie in [1, n]");
  if (!(temperature > 0.0))
    throw std::invalid_argument("relaxed_topk: temperature must be positive");

  RelaxedSubset out;
  out.temperature = temperature;
  out.k = k;

  Tensor alpha = keys;
  Tensor v;
  for (int j = 0; j < k; ++j) {
    Tensor p = softmax(scale(alpha, 1.0 / temperature));
    out.step_probs.emplace_back(p.value().data(),
                                p.value().data() + p.value().size());
    v = j == 0 ? p : add(v, p);
    if (j + 1 < k) alpha = add(alpha, log1p_neg(clamp(p, 0.0, 1.0 - 1e-12)));
  }
  out.relaxed = v;
  out.values.assign(v.value().data(), v.value().data() + v.value().size());

  std::span<const double> key_values(keys.value().data(),
                                     static_cast<size_t>(keys.value().size()));
  out.hard_indices = hard_topk(key_values, k);
  return out;
}

RelaxedSubset subset_sample(const Tensor& logits, int k, double temperature,
                            SeededRng& rng) {
  if (logits.rank() != 1)
    throw std::invalid_argument("subset_sample: logits must be a vector");
  std::span<const double> values(logits.value().data(),
                                 static_cast<size_t>(logits.value().size()));
  const GumbelKeys gumbel = draw_gumbel_keys(values, rng);
  Tensor keys = add(logits, Tensor::row(gumbel.noise));
  return relaxed_topk(keys, k, temperature);
}

}  // namespace selrank
