#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "selrank/selectors.hpp"
#include "selrank/text.hpp"

namespace selrank {

// Graded relevance judgments keyed by (query id, doc id). Duplicate pairs
// are rejected; unjudged documents read as relevance 0.
class Qrels {
 public:
  void add(const std::string& query_id, const std::string& doc_id, int relevance);
  int relevance(const std::string& query_id, const std::string& doc_id) const;
  bool has_query(const std::string& query_id) const;
  std::int64_t relevant_count(const std::string& query_id) const;  // rel >= 1
  const std::map<std::string, std::map<std::string, int>>& by_query() const {
    return judgments_;
  }

  // `qid 0 docid rel`, whitespace separated.
  static Qrels load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::map<std::string, std::map<std::string, int>> judgments_;
};

struct RunEntry {
  std::string doc_id;
  double score;
};

// TREC-format ranked results: `qid Q0 docid rank score tag`, rank from 1,
// scores non-increasing per query, doc ids unique per query.
struct RunFile {
  std::string tag = "selrank";
  std::map<std::string, std::vector<RunEntry>> rankings;

  static RunFile load(const std::string& path);
  void save(const std::string& path) const;
};

// AP with relevance binarized at >= 1 and R = number of relevant documents
// judged for the query.
double average_precision(std::span<const RunEntry> ranking,
                         const std::map<std::string, int>& judged);

// nDCG@k with linear gain rel / log2(rank + 1) by default; the ideal
// ordering ranks all judged documents. Exponential gain (2^rel - 1) sits
// behind the flag.
double ndcg_at_k(std::span<const RunEntry> ranking,
                 const std::map<std::string, int>& judged, int k,
                 bool exponential_gain = false);

double mrr(std::span<const RunEntry> ranking,
           const std::map<std::string, int>& judged);

struct MetricReport {
  struct Row {
    std::string query_id;
    double ap = 0.0;
    std::vector<double> ndcg;  // one per cutoff
    double mrr = 0.0;
  };
  std::vector<int> cutoffs;
  std::vector<Row> per_query;  // queries with at least one relevant document
  Row mean;                    // query_id = "all"
  std::vector<std::string> warnings;
};

MetricReport evaluate_run(const RunFile& run, const Qrels& qrels,
                          std::span<const int> cutoffs,
                          bool exponential_gain = false);

// Tab-separated rows, one per query plus the `all` summary row.
std::string format_report(const MetricReport& report);

// Fraction of the summary's tokens whose position in the document's token
// stream falls at or beyond head_budget; 0 for an empty summary.
double missing_token_fraction(const Document& doc, const Summary& summary,
                              std::int64_t head_budget);

// Empirical CDF as sorted (fraction, cumulative share) pairs.
std::vector<std::pair<double, double>> missing_token_cdf(
    std::vector<double> fractions);

}  // namespace selrank
