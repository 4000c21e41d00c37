#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selrank/tensor.hpp"

namespace selrank {

using TokenId = std::int32_t;

// Lowercases and splits on runs of non-alphanumeric bytes (ASCII rules;
// multi-byte UTF-8 sequences act as separators). Empty tokens are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Splits after '.', '!' or '?' when followed by whitespace or end of text.
// The terminator stays with its sentence; segments are trimmed and
// whitespace-only segments dropped.
std::vector<std::string> segment_sentences(std::string_view text);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kSpecialCount = 4;

  Vocabulary();

  TokenId add(const std::string& token);        // get-or-create
  TokenId id(const std::string& token) const;   // kUnk when absent
  std::optional<TokenId> lookup(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

  std::int64_t doc_frequency(TokenId id) const;
  void bump_doc_frequency(TokenId id);

  std::int64_t doc_count = 0;
  double avg_doc_len = 0.0;

 private:
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> df_;
};

struct Sentence {
  std::string text;
  std::vector<TokenId> tokens;
};

// Ordered sentences of one corpus document, already truncated to the
// ingestion caps (at most 500 sentences and 5000 tokens).
struct Document {
  std::string doc_id;
  std::vector<Sentence> sentences;
  std::int64_t total_tokens = 0;
};

struct Query {
  std::string query_id;
  std::string text;
  std::vector<TokenId> tokens;  // at most 50
};

struct IngestLimits {
  std::int64_t max_sentences = 500;
  std::int64_t max_doc_tokens = 5000;
  std::int64_t max_query_tokens = 50;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Document> documents;
  std::unordered_map<std::string, std::int64_t> ordinal_by_id;

  const Document& document(const std::string& doc_id) const;
  bool has_document(const std::string& doc_id) const {
    return ordinal_by_id.count(doc_id) != 0;
  }
};

// Reads line-delimited {"doc_id": ..., "text": ...} records. Malformed
// lines and duplicate ids abort with the offending line number.
Corpus ingest_corpus(const std::string& path, const IngestLimits& limits = {});

// Tab-separated `qid<TAB>text`, one query per line; tokens beyond the cap
// are dropped, out-of-vocabulary tokens map to [UNK].
std::vector<Query> load_queries(const std::string& path, const Vocabulary& vocab,
                                const IngestLimits& limits = {});

// Static word vectors, one `token v1 .. vD` line each (an optional
// word2vec-style count/dim header line is skipped). Only in-vocabulary
// tokens are kept; absent tokens read as zero vectors.
struct EmbeddingTable {
  Index dimension = 0;
  Mat vectors;  // vocab.size() rows, zero rows for tokens without a vector

  Eigen::RowVectorXd vector_for(TokenId id) const { return vectors.row(id); }
};

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab);

// Binary corpus index so runs do not re-tokenize the raw file.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace selrank
