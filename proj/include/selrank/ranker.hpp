#pragma once

#include <utility>
#include <vector>

#include "selrank/param_store.hpp"
#include "selrank/selectors.hpp"
#include "selrank/subset_sampling.hpp"
#include "selrank/text.hpp"

namespace selrank {

struct RankerConfig {
  Index model_dim = 64;
  Index layers = 2;
  Index heads = 4;
  Index ff_dim = 128;
  Index max_len = 128;
  double dropout = 0.1;  // head dropout only
};

// [CLS] q1..qn [SEP] d1..dm [SEP] plus the originating sentence index per
// token (-1 for query and special tokens). n + m + 3 <= max_len; excess
// summary tokens are dropped from the tail.
struct RankerInput {
  std::vector<TokenId> ids;
  std::vector<int> sentence_origin;
};

RankerInput assemble_input(const Query& query, const Summary& summary,
                           Index max_len);

struct RankerForwardOptions {
  bool training = false;
  SeededRng* dropout_rng = nullptr;  // required when training with dropout
  // Scalar weight per selected sentence (sentence index -> tensor), coupled
  // to that sentence's token embeddings via the straight-through estimator.
  const std::vector<std::pair<int, Tensor>>* sentence_weights = nullptr;
  // When false the weights multiply the embeddings for real (the smooth
  // surrogate whose gradient the estimator borrows); used by checks.
  bool straight_through = true;
};

// Compact transformer encoder over the assembled input: learned positions,
// `layers` blocks of multi-head self-attention and feed-forward sublayers
// with residual + layer norm, then a sigmoid head on the [CLS] output.
class TransformerRanker {
 public:
  TransformerRanker(ParameterStore& store, const RankerConfig& config,
                    SeededRng& init);

  Tensor score(const RankerInput& input, const RankerForwardOptions& options) const;
  // Inference-mode convenience; no dropout, no coupling.
  double score_value(const Query& query, const Summary& summary) const;

  const RankerConfig& config() const { return config_; }

 private:
  RankerConfig config_;
  Tensor embedding_;
  Tensor positions_;
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers_;
  Tensor head_w_, head_b_;
};

// Eq.-style coupling weights: the relaxed k-hot entry of each selected
// sentence, clamped to [0, 1] at this point of use.
std::vector<std::pair<int, Tensor>> khot_sentence_weights(
    const RelaxedSubset& subset, const Summary& summary);

// Alternative coupling: the softmax probability of each selected sentence.
std::vector<std::pair<int, Tensor>> softmax_sentence_weights(
    const Tensor& logits, const Summary& summary);

}  // namespace selrank
