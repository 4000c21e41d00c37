#include "selrank/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace selrank {

double bm25_term_score(double tf, double df, double doc_count, double length,
                       double avg_length, const Bm25Params& params) {
  if (tf <= 0.0) return 0.0;
  const double idf = std::log(1.0 + (doc_count - df + 0.5) / (df + 0.5));
  const double norm =
      avg_length > 0.0 ? 1.0 - params.b + params.b * length / avg_length : 1.0;
  return idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
}

double bm25_score(std::span<const TokenId> query, const UnitStats& stats,
                  const Bm25Params& params) {
  double total = 0.0;
  for (TokenId t : query) {
    auto it = stats.term_freq->find(t);
    if (it == stats.term_freq->end()) continue;
    total += bm25_term_score(static_cast<double>(it->second),
                             static_cast<double>(stats.doc_frequency(t)),
                             stats.doc_count, stats.length, stats.avg_length,
                             params);
  }
  return total;
}

InvertedIndex InvertedIndex::build(const Corpus& corpus) {
  if (corpus.documents.empty())
    throw std::invalid_argument("build_index: empty corpus");
  InvertedIndex index;
  std::int64_t total = 0;
  for (size_t d = 0; d < corpus.documents.size(); ++d) {
    const Document& doc = corpus.documents[d];
    std::unordered_map<TokenId, std::int64_t> tf;
    for (const auto& s : doc.sentences)
      for (TokenId t : s.tokens) tf[t]++;
    for (const auto& [t, freq] : tf)
      index.postings_[t].push_back({static_cast<std::int64_t>(d), freq});
    index.lengths_.push_back(doc.total_tokens);
    total += doc.total_tokens;
  }
  for (auto& [t, list] : index.postings_)
    std::sort(list.begin(), list.end(),
              [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
  index.avg_len_ = static_cast<double>(total) /
                   static_cast<double>(corpus.documents.size());
  return index;
}

const std::vector<Posting>& InvertedIndex::postings(TokenId t) const {
  auto it = postings_.find(t);
  return it == postings_.end() ? empty_ : it->second;
}

std::int64_t InvertedIndex::doc_length(std::int64_t ordinal) const {
  return lengths_.at(static_cast<size_t>(ordinal));
}

std::vector<InvertedIndex::Hit> InvertedIndex::retrieve(
    std::span<const TokenId> query, std::int64_t n,
    const Bm25Params& params) const {
  if (n <= 0) throw std::invalid_argument("retrieve: n must be positive");
  std::unordered_map<std::int64_t, double> accumulator;
  for (TokenId t : query) {
    const auto& list = postings(t);
    if (list.empty()) continue;
    const double df = static_cast<double>(list.size());
    for (const Posting& p : list) {
      accumulator[p.doc] += bm25_term_score(
          static_cast<double>(p.tf), df, static_cast<double>(doc_count()),
          static_cast<double>(lengths_[static_cast<size_t>(p.doc)]), avg_len_,
          params);
    }
  }
  std::vector<Hit> hits;
  hits.reserve(accumulator.size());
  for (const auto& [doc, score] : accumulator) hits.push_back({doc, score});
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc < b.doc;
  });
  if (static_cast<std::int64_t>(hits.size()) > n)
    hits.resize(static_cast<size_t>(n));
  return hits;
}

}  // namespace selrank
