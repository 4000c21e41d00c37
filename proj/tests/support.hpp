#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "selrank/text.hpp"

namespace selrank::testsupport {

// Builds a corpus through the regular ingestion path from (doc_id, text)
// pairs, so fixtures share production tokenization and statistics.
inline Corpus corpus_from_docs(
    const std::vector<std::pair<std::string, std::string>>& docs,
    const IngestLimits& limits = {}) {
  const std::string path = "support_fixture.jsonl";
  {
    std::ofstream os(path);
    for (const auto& [id, text] : docs)
      os << R"({"doc_id": ")" << id << R"(", "text": ")" << text << "\"}\n";
  }
  Corpus corpus = ingest_corpus(path, limits);
  std::remove(path.c_str());
  return corpus;
}

inline Query make_query(const Vocabulary& vocab, const std::string& id,
                        const std::string& text) {
  Query q;
  q.query_id = id;
  q.text = text;
  for (const auto& word : tokenize(text)) q.tokens.push_back(vocab.id(word));
  return q;
}

}  // namespace selrank::testsupport
