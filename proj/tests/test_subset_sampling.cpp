#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "selrank/gradcheck.hpp"
#include "selrank/subset_sampling.hpp"

using namespace selrank;

namespace {

// Plackett-Luce enumeration: probability that sampling k items without
// replacement (by weight) yields exactly `subset`, in any order.
double enumerate_subset_probability(const std::vector<double>& weights,
                                    std::vector<int> subset) {
  std::sort(subset.begin(), subset.end());
  double total_weight = std::accumulate(weights.begin(), weights.end(), 0.0);
  double prob = 0.0;
  do {
    double p = 1.0, denom = total_weight;
    for (int idx : subset) {
      p *= weights[static_cast<size_t>(idx)] / denom;
      denom -= weights[static_cast<size_t>(idx)];
    }
    prob += p;
  } while (std::next_permutation(subset.begin(), subset.end()));
  return prob;
}

}  // namespace

TEST_CASE("gumbel noise closed form and monotonicity") {
  CHECK(gumbel_noise(0.5) == doctest::Approx(-std::log(std::log(2.0))));
  CHECK(gumbel_noise(0.5) == doctest::Approx(0.36651292).epsilon(1e-6));
  CHECK(gumbel_noise(0.9) > gumbel_noise(0.5));
  CHECK(gumbel_noise(0.5) > gumbel_noise(0.1));
  CHECK(gumbel_noise(0.999999) > 10.0);
  CHECK_THROWS_AS(gumbel_noise(0.0), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_noise(1.0), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_noise(-0.3), std::invalid_argument);
}

TEST_CASE("gumbel sample median matches -ln ln 2") {
  SeededRng rng(7);
  std::vector<double> samples;
  samples.reserve(100000);
  for (int i = 0; i < 100000; ++i) samples.push_back(gumbel_noise(rng.uniform01()));
  std::nth_element(samples.begin(), samples.begin() + 50000, samples.end());
  CHECK(samples[50000] == doctest::Approx(0.3665).epsilon(0.055));
  CHECK(std::abs(samples[50000] - 0.3665) < 0.02);
}

TEST_CASE("gumbel argmax samples the softmax distribution") {
  const std::vector<double> logits{std::log(1.0), std::log(3.0)};
  SeededRng rng(11);
  int ones = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    if (gumbel_argmax_sample(logits, rng) == 1) ++ones;
  CHECK(std::abs(static_cast<double>(ones) / draws - 0.75) < 0.01);
}

TEST_CASE("gumbel argmax trivia") {
  SeededRng rng(3);
  const std::vector<double> one{1.7};
  for (int i = 0; i < 10; ++i) CHECK(gumbel_argmax_sample(one, rng) == 0);

  // shifting all logits leaves the draw unchanged under the same noise
  const std::vector<double> base{0.3, -1.0, 2.0, 0.0};
  std::vector<double> shifted = base;
  for (double& v : shifted) v += 17.25;
  for (int i = 0; i < 50; ++i) {
    SeededRng a(100 + i), b(100 + i);
    CHECK(gumbel_argmax_sample(base, a) == gumbel_argmax_sample(shifted, b));
  }
}

TEST_CASE("hard_topk basics") {
  const std::vector<double> keys{0.1, 0.9, 0.5, 0.7};
  CHECK(hard_topk(keys, 2) == std::vector<int>{1, 3});
  CHECK(hard_topk(keys, 4) == std::vector<int>{0, 1, 2, 3});
  const std::vector<double> tied{5.0, 5.0, 1.0};
  CHECK(hard_topk(tied, 1) == std::vector<int>{0});
  CHECK(hard_topk(tied, 2) == std::vector<int>{0, 1});
}

TEST_CASE("hard_topk over gumbel keys is weighted sampling without replacement") {
  const std::vector<double> weights{1.0, 2.0, 3.0, 4.0};
  std::vector<double> logits;
  for (double w : weights) logits.push_back(std::log(w));

  SeededRng rng(2025);
  std::map<std::vector<int>, int> counts;
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) {
    const GumbelKeys keys = draw_gumbel_keys(logits, rng);
    counts[hard_topk(keys.keys, 2)]++;
  }
  CHECK(enumerate_subset_probability(weights, {2, 3}) ==
        doctest::Approx(0.37142857).epsilon(1e-6));
  for (const auto& [subset, count] : counts) {
    const double expected = enumerate_subset_probability(weights, subset);
    const double freq = static_cast<double>(count) / draws;
    CHECK(std::abs(freq - expected) < 0.01);
  }
}

TEST_CASE("relaxed_topk with equal keys is uniform per step") {
  Tensor keys = Tensor::row({1.0, 1.0, 1.0, 1.0});
  RelaxedSubset rs = relaxed_topk(keys, 2, 1.0);
  for (double v : rs.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  for (const auto& step : rs.step_probs) {
    double sum = std::accumulate(step.begin(), step.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("relaxed k-hot mass always sums to k") {
  SeededRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(50));
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    std::vector<double> keys;
    for (int i = 0; i < n; ++i) keys.push_back(rng.uniform(-4.0, 4.0));
    RelaxedSubset rs = relaxed_topk(Tensor::row(keys), k, 0.7);
    const double sum = std::accumulate(rs.values.begin(), rs.values.end(), 0.0);
    CHECK(std::abs(sum - k) < 1e-9);
    for (double v : rs.values) CHECK(v >= 0.0);
  }
}

TEST_CASE("relaxed vector anneals to the hard indicator") {
  SeededRng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    const int k = 1 + static_cast<int>(rng.below(3));
    // keys separated by at least 1e-2
    std::vector<double> keys;
    for (int i = 0; i < n; ++i) keys.push_back(0.013 * i);
    for (int i = 0; i < n; ++i) std::swap(keys[rng.below(n)], keys[rng.below(n)]);

    RelaxedSubset rs = relaxed_topk(Tensor::row(keys), k, 1e-4);
    std::vector<int> hard = hard_topk(keys, k);
    std::vector<double> indicator(keys.size(), 0.0);
    for (int i : hard) indicator[static_cast<size_t>(i)] = 1.0;
    for (size_t i = 0; i < keys.size(); ++i)
      CHECK(std::abs(rs.values[i] - indicator[i]) <= 1e-6);

    // hard set equals the k largest relaxed entries at low temperature
    CHECK(hard_topk(rs.values, k) == hard);
  }
}

TEST_CASE("relaxed_topk rejects bad arguments") {
  Tensor keys = Tensor::row({1.0, 2.0});
  CHECK_THROWS_AS(relaxed_topk(keys, 3, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(relaxed_topk(keys, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(relaxed_topk(keys, 1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(relaxed_topk(keys, 1, -2.0), std::invalid_argument);
}

TEST_CASE("subset_sample is deterministic under a fixed seed") {
  Tensor logits = Tensor::row({0.2, -0.3, 1.4, 0.0, 0.5});
  SeededRng a(77), b(77);
  RelaxedSubset ra = subset_sample(logits, 3, 1.0, a);
  RelaxedSubset rb = subset_sample(logits, 3, 1.0, b);
  CHECK(ra.hard_indices == rb.hard_indices);
  CHECK(ra.values == rb.values);
}

TEST_CASE("subset_sample with k = n selects everything") {
  Tensor logits = Tensor::row({0.2, -0.3, 1.4});
  SeededRng rng(8);
  RelaxedSubset rs = subset_sample(logits, 3, 1.0, rng);
  CHECK(rs.hard_indices == std::vector<int>{0, 1, 2});
  const double sum = std::accumulate(rs.values.begin(), rs.values.end(), 0.0);
  CHECK(sum == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("frozen-noise gradients flow through the relaxation") {
  ParameterStore params;
  SeededRng init(13);
  Tensor logits = params.create("logits", 1, 6, 1, Init::kXavier, init);

  SeededRng noise_rng(21);
  std::vector<double> zeros(6, 0.0);
  const GumbelKeys frozen = draw_gumbel_keys(zeros, noise_rng);
  Tensor costs = Tensor::row({0.3, -1.0, 0.7, 0.1, 2.0, -0.4});

  auto build = [&] {
    Tensor keys = add(logits, Tensor::row(frozen.noise));
    RelaxedSubset rs = relaxed_topk(keys, 3, 0.8);
    return dot(rs.relaxed, costs);
  };
  SeededRng pick(4);
  auto res = gradient_check(build, params, 1e-5, pick);
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-4);
}
