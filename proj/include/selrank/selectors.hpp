#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selrank/param_store.hpp"
#include "selrank/retrieval.hpp"
#include "selrank/text.hpp"

namespace selrank {

// Per-sentence selector logits, order-aligned with the document. -inf marks
// sentences excluded from selection (empty sentences, head-limit cutoff).
struct SentenceScores {
  std::vector<double> logits;
  std::optional<std::vector<double>> probs;
};

// Fills probs with the max-subtracted softmax of the logits. -inf entries
// get zero mass; rejecting inputs where nothing is eligible.
SentenceScores normalize(SentenceScores scores);

// The extractive summary: selected sentence indices in ascending order and
// the concatenation of their tokens in original document order.
// token_origin maps each token back to its sentence index.
struct Summary {
  std::vector<int> indices;
  int k = 0;
  std::vector<TokenId> token_ids;
  std::vector<int> token_origin;
};

// Takes the k highest-logit sentences among the first head_limit (all when
// absent), ties toward the lower index. Fewer than k eligible sentences
// means all of them are taken.
Summary hard_select(const SentenceScores& scores, const Document& doc, int k,
                    std::optional<int> head_limit = std::nullopt);

enum class SelectorKind { kTfidf, kBm25, kSemantic, kLinear, kAttentive, kRandom };

SelectorKind selector_kind_from_string(const std::string& name);
std::string to_string(SelectorKind kind);
bool selector_is_trainable(SelectorKind kind);

// --- pipeline selectors --------------------------------------------------------

// w_i = sum over distinct shared terms of tf(t, s_i) * ln(N / df(t)), with
// N and df taken over the corpus documents.
SentenceScores score_tfidf(const Query& query, const Document& doc,
                           const Vocabulary& vocab);

// Okapi BM25 per sentence; the "collection" is the scored document's own
// sentence set (sentence-level df, lengths and average length).
SentenceScores score_bm25(const Query& query, const Document& doc,
                          const Bm25Params& params = {});

// Cosine of averaged static word vectors; an all-zero average scores 0.
SentenceScores score_semantic(const Query& query, const Document& doc,
                              const EmbeddingTable& embeddings);

// i.i.d. uniform logits; the Random baseline.
SentenceScores score_random(const Document& doc, SeededRng& rng);

// --- trainable selectors -------------------------------------------------------

struct SelectorConfig {
  Index embed_dim = 64;       // must equal the ranker dim when E is shared
  Index hidden = 32;          // affine width / recurrent state size
  Index att_dim = 32;
  bool shared_affine = true;  // one feed-forward layer for query and sentence
};

struct DifferentiableScores {
  Tensor logits;          // rank-1; empty sentences carry -inf constants
  SentenceScores scores;  // materialized copy of the logits
};

// Averaged token embeddings for query and sentence, one affine layer, dot
// product score.
class LinearSelector {
 public:
  LinearSelector(ParameterStore& store, const SelectorConfig& config,
                 SeededRng& init);
  DifferentiableScores score(const Query& query, const Document& doc) const;
  const SelectorConfig& config() const { return config_; }

 private:
  SelectorConfig config_;
  Tensor embedding_;
  Tensor query_w_, query_b_;
  Tensor sent_w_, sent_b_;  // alias the query layer when shared_affine
};

// Uniform dispatch over the six selector kinds, so ranking and analysis
// code can treat them interchangeably. Only the members needed by `kind`
// have to be populated.
struct SelectorHandle {
  SelectorKind kind = SelectorKind::kBm25;
  const Vocabulary* vocab = nullptr;           // tfidf
  const EmbeddingTable* embeddings = nullptr;  // semantic
  Bm25Params bm25;
  std::shared_ptr<class LinearSelector> linear;
  std::shared_ptr<class AttentiveSelector> attentive;
  std::shared_ptr<SeededRng> random_rng;       // random baseline

  SentenceScores score(const Query& query, const Document& doc) const;
};

// Shared bidirectional GRU encoder over query and document tokens with a
// token-level attention readout per sentence; the score is the cosine of
// the pooled sentence representation against the pooled query.
class AttentiveSelector {
 public:
  AttentiveSelector(ParameterStore& store, const SelectorConfig& config,
                    SeededRng& init);
  DifferentiableScores score(const Query& query, const Document& doc) const;
  const SelectorConfig& config() const { return config_; }

 private:
  Tensor run_gru(const std::vector<TokenId>& ids) const;  // [T, 2*hidden]

  SelectorConfig config_;
  Tensor embedding_;
  struct Direction {
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wn, un, bn;
  };
  Direction fwd_, bwd_;
  Tensor att_w1_, att_w2_, att_w3_;
};

}  // namespace selrank
