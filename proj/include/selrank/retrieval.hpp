#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "selrank/text.hpp"

namespace selrank {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Okapi BM25 for one term occurrence:
//   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len))
// with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
double bm25_term_score(double tf, double df, double doc_count, double length,
                       double avg_length, const Bm25Params& params = {});

// Scores an arbitrary unit (document or sentence) against the query tokens.
// Each occurrence of a term in the query contributes once, so repeated
// query terms count repeatedly. Statistics must describe the enclosing
// collection of the unit.
struct UnitStats {
  const std::unordered_map<TokenId, std::int64_t>* term_freq;  // tf within unit
  double length;
  double avg_length;
  double doc_count;
  // document frequency of `t` in the enclosing collection
  std::function<std::int64_t(TokenId)> doc_frequency;
};

double bm25_score(std::span<const TokenId> query, const UnitStats& stats,
                  const Bm25Params& params = {});

struct Posting {
  std::int64_t doc;  // ordinal in the corpus
  std::int64_t tf;
};

// First-stage index over the corpus documents; immutable after build.
class InvertedIndex {
 public:
  static InvertedIndex build(const Corpus& corpus);

  const std::vector<Posting>& postings(TokenId t) const;
  std::int64_t doc_length(std::int64_t ordinal) const;
  double avg_doc_length() const { return avg_len_; }
  std::int64_t doc_count() const { return static_cast<std::int64_t>(lengths_.size()); }

  struct Hit {
    std::int64_t doc;
    double score;
  };
  // Top-n documents by BM25, descending score, ties by ascending ordinal.
  // Documents sharing no term with the query are not returned.
  std::vector<Hit> retrieve(std::span<const TokenId> query, std::int64_t n,
                            const Bm25Params& params = {}) const;

 private:
  std::unordered_map<TokenId, std::vector<Posting>> postings_;
  std::vector<std::int64_t> lengths_;
  double avg_len_ = 0.0;
  std::vector<Posting> empty_;
};

}  // namespace selrank
