#include "selrank/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace selrank {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char ch : text) {
    if (ch < 0x80 && std::isalnum(ch)) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> segment_sentences(std::string_view text) {
  std::vector<std::string> out;
  size_t start = 0;
  auto emit = [&](size_t end) {
    std::string seg = trim(text.substr(start, end - start));
    if (!seg.empty()) out.push_back(std::move(seg));
    start = end;
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || is_space(text[i + 1]))) {
      emit(i + 1);
    }
  }
  emit(text.size());
  return out;
}

// --- Vocabulary -----------------------------------------------------------------

Vocabulary::Vocabulary() {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  df_.assign(tokens_.size(), 0);
  for (TokenId i = 0; i < kSpecialCount; ++i) index_[tokens_[static_cast<size_t>(i)]] = i;
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const TokenId id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(token);
  df_.push_back(0);
  return id;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::optional<TokenId> Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range");
  return tokens_[static_cast<size_t>(id)];
}

std::int64_t Vocabulary::doc_frequency(TokenId id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range");
  return df_[static_cast<size_t>(id)];
}

void Vocabulary::bump_doc_frequency(TokenId id) {
  df_.at(static_cast<size_t>(id))++;
}

// --- Corpus ---------------------------------------------------------------------

const Document& Corpus::document(const std::string& doc_id) const {
  auto it = ordinal_by_id.find(doc_id);
  if (it == ordinal_by_id.end())
    throw std::invalid_argument("unknown doc_id: " + doc_id);
  return documents[static_cast<size_t>(it->second)];
}

Corpus ingest_corpus(const std::string& path, const IngestLimits& limits) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open corpus file: " + path);

  Corpus corpus;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t token_total = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() ||
        !record.contains("doc_id") || !record.contains("text") ||
        !record["doc_id"].is_string() || !record["text"].is_string()) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": expected {\"doc_id\": ..., \"text\": ...}");
    }
    Document doc;
    doc.doc_id = record["doc_id"].get<std::string>();
    if (corpus.ordinal_by_id.count(doc.doc_id))
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": duplicate doc_id " + doc.doc_id);

    std::vector<std::string> raw_sentences =
        segment_sentences(record["text"].get<std::string>());
    if (static_cast<std::int64_t>(raw_sentences.size()) > limits.max_sentences)
      raw_sentences.resize(static_cast<size_t>(limits.max_sentences));

    std::vector<std::vector<std::string>> kept_tokens;
    for (auto& raw : raw_sentences) {
      std::vector<std::string> words = tokenize(raw);
      if (doc.total_tokens + static_cast<std::int64_t>(words.size()) >
          limits.max_doc_tokens)
        break;  // the crossing sentence and everything after it is dropped
      doc.total_tokens += static_cast<std::int64_t>(words.size());
      Sentence s;
      s.text = std::move(raw);
      kept_tokens.push_back(std::move(words));
      doc.sentences.push_back(std::move(s));
    }

    std::vector<TokenId> seen;  // distinct ids of this document, for df
    for (size_t i = 0; i < doc.sentences.size(); ++i) {
      for (const auto& word : kept_tokens[i]) {
        const TokenId id = corpus.vocab.add(word);
        doc.sentences[i].tokens.push_back(id);
        seen.push_back(id);
      }
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (TokenId id : seen) corpus.vocab.bump_doc_frequency(id);

    token_total += doc.total_tokens;
    corpus.ordinal_by_id.emplace(doc.doc_id,
                                 static_cast<std::int64_t>(corpus.documents.size()));
    corpus.documents.push_back(std::move(doc));
  }
  corpus.vocab.doc_count = static_cast<std::int64_t>(corpus.documents.size());
  corpus.vocab.avg_doc_len =
      corpus.vocab.doc_count == 0
          ? 0.0
          : static_cast<double>(token_total) /
                static_cast<double>(corpus.vocab.doc_count);
  return corpus;
}

std::vector<Query> load_queries(const std::string& path, const Vocabulary& vocab,
                                const IngestLimits& limits) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open query file: " + path);
  std::vector<Query> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("query line " + std::to_string(line_no) +
                               ": expected qid<TAB>text");
    Query q;
    q.query_id = line.substr(0, tab);
    q.text = line.substr(tab + 1);
    for (const auto& word : tokenize(q.text)) {
      if (static_cast<std::int64_t>(q.tokens.size()) >= limits.max_query_tokens)
        break;
      q.tokens.push_back(vocab.id(word));
    }
    out.push_back(std::move(q));
  }
  return out;
}

// --- embeddings -----------------------------------------------------------------

namespace {

bool looks_like_header(const std::string& line) {
  std::istringstream ls(line);
  std::string a, b, extra;
  if (!(ls >> a >> b) || (ls >> extra)) return false;
  auto integral = [](const std::string& s) {
    return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
  };
  return integral(a) && integral(b);
}

}  // namespace

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open embedding file: " + path);
  EmbeddingTable table;
  std::string line;
  std::int64_t line_no = 0;
  bool first = true;
  std::vector<std::pair<TokenId, std::vector<double>>> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (first && looks_like_header(line)) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (values.empty())
      throw std::runtime_error("embedding line " + std::to_string(line_no) +
                               ": no vector components");
    if (table.dimension == 0) table.dimension = static_cast<Index>(values.size());
    if (static_cast<Index>(values.size()) != table.dimension)
      throw std::runtime_error("embedding line " + std::to_string(line_no) +
                               ": dimension " + std::to_string(values.size()) +
                               " != " + std::to_string(table.dimension));
    if (auto id = vocab.lookup(token)) rows.emplace_back(*id, std::move(values));
  }
  table.vectors = Mat::Zero(vocab.size(), std::max<Index>(table.dimension, 1));
  for (const auto& [id, values] : rows)
    for (size_t j = 0; j < values.size(); ++j)
      table.vectors(id, static_cast<Index>(j)) = values[j];
  return table;
}

// --- binary corpus index ------------------------------------------------------------

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("corpus index: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("corpus index: truncated string");
  return s;
}

constexpr const char* kCorpusMagic = "SELRANK-CORPUS-1";

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open corpus index for writing: " + path);
  write_str(os, kCorpusMagic);
  write_u64(os, static_cast<std::uint64_t>(corpus.vocab.size()));
  for (TokenId i = 0; i < corpus.vocab.size(); ++i) {
    write_str(os, corpus.vocab.token(i));
    write_u64(os, static_cast<std::uint64_t>(corpus.vocab.doc_frequency(i)));
  }
  write_u64(os, static_cast<std::uint64_t>(corpus.vocab.doc_count));
  write_u64(os, std::bit_cast<std::uint64_t>(corpus.vocab.avg_doc_len));
  write_u64(os, corpus.documents.size());
  for (const auto& doc : corpus.documents) {
    write_str(os, doc.doc_id);
    write_u64(os, doc.sentences.size());
    for (const auto& s : doc.sentences) {
      write_str(os, s.text);
      write_u64(os, s.tokens.size());
      for (TokenId id : s.tokens) write_u64(os, static_cast<std::uint64_t>(id));
    }
  }
  if (!os) throw std::runtime_error("corpus index write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus index: " + path);
  if (read_str(is) != kCorpusMagic)
    throw std::runtime_error("bad corpus index magic: " + path);
  Corpus corpus;
  const std::uint64_t vocab_size = read_u64(is);
  for (std::uint64_t i = 0; i < vocab_size; ++i) {
    const std::string token = read_str(is);
    const auto df = static_cast<std::int64_t>(read_u64(is));
    TokenId id;
    if (i < Vocabulary::kSpecialCount) {
      id = static_cast<TokenId>(i);
      if (corpus.vocab.token(id) != token)
        throw std::runtime_error("corpus index: special token mismatch");
    } else {
      id = corpus.vocab.add(token);
      if (id != static_cast<TokenId>(i))
        throw std::runtime_error("corpus index: non-dense token ids");
    }
    for (std::int64_t d = 0; d < df; ++d) corpus.vocab.bump_doc_frequency(id);
  }
  corpus.vocab.doc_count = static_cast<std::int64_t>(read_u64(is));
  corpus.vocab.avg_doc_len = std::bit_cast<double>(read_u64(is));
  const std::uint64_t doc_count = read_u64(is);
  for (std::uint64_t d = 0; d < doc_count; ++d) {
    Document doc;
    doc.doc_id = read_str(is);
    const std::uint64_t sentence_count = read_u64(is);
    for (std::uint64_t si = 0; si < sentence_count; ++si) {
      Sentence s;
      s.text = read_str(is);
      const std::uint64_t token_count = read_u64(is);
      for (std::uint64_t t = 0; t < token_count; ++t)
        s.tokens.push_back(static_cast<TokenId>(read_u64(is)));
      doc.total_tokens += static_cast<std::int64_t>(token_count);
      doc.sentences.push_back(std::move(s));
    }
    corpus.ordinal_by_id.emplace(doc.doc_id,
                                 static_cast<std::int64_t>(corpus.documents.size()));
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace selrank
