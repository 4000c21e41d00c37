#pragma once

#include <span>
#include <vector>

#include "selrank/rng.hpp"
#include "selrank/tensor.hpp"

namespace selrank {

// g = -log(-log u) for u in (0, 1).
double gumbel_noise(double u);

// Perturbed keys r_i = w_i + g_i; selector logits act directly as
// log-weights. The uniforms are kept so tests can replay draws.
struct GumbelKeys {
  std::vector<double> uniforms;
  std::vector<double> noise;
  std::vector<double> keys;
};

GumbelKeys draw_gumbel_keys(std::span<const double> logits, SeededRng& rng);

// argmax_i (w_i + g_i); distributed as softmax(w).
int gumbel_argmax_sample(std::span<const double> logits, SeededRng& rng);

// Indices of the k largest keys, ties broken toward the lower index,
// returned ascending. Top-k of Gumbel keys performs weighted sampling
// without replacement over softmax(w).
std::vector<int> hard_topk(std::span<const double> keys, int k);

// Relaxed k-hot vector v with v_i = sum_j p(a_i^j = 1), plus the hard
// index set taken from the same keys. v_i >= 0 and sum_i v_i = k; entries
// may exceed 1 at finite temperature, so consumers clamp at the point of
// use. The per-step inclusion probabilities are kept for analysis.
struct RelaxedSubset {
  Tensor relaxed;                               // rank-1, differentiable
  std::vector<double> values;                   // materialized v
  std::vector<std::vector<double>> step_probs;  // k rows over n positions
  std::vector<int> hard_indices;                // ascending
  double temperature = 1.0;
  int k = 0;
};

// Relaxed top-k over explicit keys (selector logits plus frozen noise).
// Each step softmaxes alpha / t and then downweights selected mass via
// alpha += log1p(-p), with p clamped below 1 - 1e-12 to keep the update
// finite.
RelaxedSubset relaxed_topk(const Tensor& keys, int k, double temperature);

// Draws fresh Gumbel keys for the logits and applies relaxed_topk; the
// hard set and the relaxed vector share the same draw.
RelaxedSubset subset_sample(const Tensor& logits, int k, double temperature,
                            SeededRng& rng);

}  // namespace selrank
