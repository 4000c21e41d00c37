#include "selrank/selectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace selrank {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fetches an existing parameter or creates it, so models can share tensors
// (the embedding in end-to-end mode) through one store.
Tensor ensure_param(ParameterStore& store, const std::string& name, Index rows,
                    Index cols, int rank, Init init, SeededRng& rng) {
  if (store.contains(name)) {
    Tensor t = store.get(name);
    if (t.rows() != rows || t.cols() != cols)
      throw std::invalid_argument("parameter " + name + " has shape " +
                                  std::to_string(t.rows()) + "x" +
                                  std::to_string(t.cols()) + ", expected " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    return t;
  }
  return store.create(name, rows, cols, rank, init, rng);
}

std::vector<Index> to_indices(const std::vector<TokenId>& ids) {
  std::vector<Index> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(static_cast<Index>(id));
  return out;
}

}  // namespace

SentenceScores normalize(SentenceScores scores) {
  double max_logit = kNegInf;
  for (double w : scores.logits) max_logit = std::max(max_logit, w);
  if (!(max_logit > kNegInf))
    throw std::invalid_argument("normalize: no eligible sentence");
  std::vector<double> probs(scores.logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.logits.size(); ++i) {
    probs[i] = std::exp(scores.logits[i] - max_logit);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  scores.probs = std::move(probs);
  return scores;
}

Summary hard_select(const SentenceScores& scores, const Document& doc, int k,
                    std::optional<int> head_limit) {
  if (k < 1) throw std::invalid_argument("hard_select: k must be >= 1");
  if (scores.logits.size() != doc.sentences.size())
    throw std::invalid_argument("hard_select: score/sentence count mismatch");
  int n = static_cast<int>(scores.logits.size());
  if (head_limit) n = std::min(n, std::max(0, *head_limit));

  std::vector<int> eligible;
  for (int i = 0; i < n; ++i)
    if (scores.logits[static_cast<size_t>(i)] > kNegInf) eligible.push_back(i);
  std::stable_sort(eligible.begin(), eligible.end(), [&](int a, int b) {
    return scores.logits[static_cast<size_t>(a)] >
           scores.logits[static_cast<size_t>(b)];
  });
  if (static_cast<int>(eligible.size()) > k)
    eligible.resize(static_cast<size_t>(k));
  std::sort(eligible.begin(), eligible.end());

  Summary summary;
  summary.k = k;
  summary.indices = std::move(eligible);
  for (int i : summary.indices) {
    const auto& tokens = doc.sentences[static_cast<size_t>(i)].tokens;
    summary.token_ids.insert(summary.token_ids.end(), tokens.begin(), tokens.end());
    summary.token_origin.insert(summary.token_origin.end(), tokens.size(), i);
  }
  return summary;
}

SelectorKind selector_kind_from_string(const std::string& name) {
  if (name == "tfidf") return SelectorKind::kTfidf;
  if (name == "bm25") return SelectorKind::kBm25;
  if (name == "semantic") return SelectorKind::kSemantic;
  if (name == "linear") return SelectorKind::kLinear;
  if (name == "attentive") return SelectorKind::kAttentive;
  if (name == "random") return SelectorKind::kRandom;
  throw std::invalid_argument("unknown selector: " + name);
}

std::string to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::kTfidf: return "tfidf";
    case SelectorKind::kBm25: return "bm25";
    case SelectorKind::kSemantic: return "semantic";
    case SelectorKind::kLinear: return "linear";
    case SelectorKind::kAttentive: return "attentive";
    case SelectorKind::kRandom: return "random";
  }
  return "?";
}

bool selector_is_trainable(SelectorKind kind) {
  return kind == SelectorKind::kLinear || kind == SelectorKind::kAttentive;
}

// --- pipeline selectors --------------------------------------------------------

SentenceScores score_tfidf(const Query& query, const Document& doc,
                           const Vocabulary& vocab) {
  std::unordered_set<TokenId> query_terms(query.tokens.begin(), query.tokens.end());
  SentenceScores out;
  out.logits.reserve(doc.sentences.size());
  const double n_docs = static_cast<double>(vocab.doc_count);
  for (const auto& sentence : doc.sentences) {
    std::unordered_map<TokenId, std::int64_t> tf;
    for (TokenId t : sentence.tokens) tf[t]++;
    double score = 0.0;
    for (const auto& [t, freq] : tf) {
      if (!query_terms.count(t)) continue;
      const double df = static_cast<double>(vocab.doc_frequency(t));
      score += static_cast<double>(freq) * std::log(n_docs / df);
    }
    out.logits.push_back(score);
  }
  return out;
}

SentenceScores score_bm25(const Query& query, const Document& doc,
                          const Bm25Params& params) {
  // Sentence-level statistics: the enclosing collection is this document.
  const double n_sentences = static_cast<double>(doc.sentences.size());
  std::vector<std::unordered_map<TokenId, std::int64_t>> tf(doc.sentences.size());
  std::unordered_map<TokenId, std::int64_t> df;
  double total_len = 0.0;
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    for (TokenId t : doc.sentences[i].tokens) tf[i][t]++;
    for (const auto& [t, _] : tf[i]) df[t]++;
    total_len += static_cast<double>(doc.sentences[i].tokens.size());
  }
  const double avg_len = n_sentences > 0.0 ? total_len / n_sentences : 0.0;

  SentenceScores out;
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    UnitStats stats{&tf[i], static_cast<double>(doc.sentences[i].tokens.size()),
                    avg_len, n_sentences, [&](TokenId t) {
                      auto it = df.find(t);
                      return it == df.end() ? std::int64_t{0} : it->second;
                    }};
    out.logits.push_back(bm25_score(query.tokens, stats, params));
  }
  return out;
}

SentenceScores score_semantic(const Query& query, const Document& doc,
                              const EmbeddingTable& embeddings) {
  auto average = [&](const std::vector<TokenId>& ids) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(embeddings.vectors.cols());
    for (TokenId id : ids) sum += embeddings.vectors.row(id);
    if (!ids.empty()) sum /= static_cast<double>(ids.size());
    return sum;
  };
  const Eigen::RowVectorXd q = average(query.tokens);
  const double qn = q.norm();
  SentenceScores out;
  for (const auto& sentence : doc.sentences) {
    const Eigen::RowVectorXd s = average(sentence.tokens);
    const double sn = s.norm();
    out.logits.push_back(qn > 0.0 && sn > 0.0 ? q.dot(s) / (qn * sn) : 0.0);
  }
  return out;
}

SentenceScores score_random(const Document& doc, SeededRng& rng) {
  SentenceScores out;
  out.logits.reserve(doc.sentences.size());
  for (size_t i = 0; i < doc.sentences.size(); ++i)
    out.logits.push_back(rng.uniform01());
  return out;
}

SentenceScores SelectorHandle::score(const Query& query, const Document& doc) const {
  switch (kind) {
    case SelectorKind::kTfidf:
      if (!vocab) throw std::invalid_argument("tfidf selector needs corpus stats");
      return score_tfidf(query, doc, *vocab);
    case SelectorKind::kBm25:
      return score_bm25(query, doc, bm25);
    case SelectorKind::kSemantic:
      if (!embeddings)
        throw std::invalid_argument("semantic selector needs an embedding table");
      return score_semantic(query, doc, *embeddings);
    case SelectorKind::kRandom:
      if (!random_rng)
        throw std::invalid_argument("random selector needs a seeded rng");
      return score_random(doc, *random_rng);
    case SelectorKind::kLinear:
      if (!linear) throw std::invalid_argument("linear selector not loaded");
      return linear->score(query, doc).scores;
    case SelectorKind::kAttentive:
      if (!attentive) throw std::invalid_argument("attentive selector not loaded");
      return attentive->score(query, doc).scores;
  }
  throw std::invalid_argument("unhandled selector kind");
}

// --- linear selector -------------------------------------------------------------

LinearSelector::LinearSelector(ParameterStore& store, const SelectorConfig& config,
                               SeededRng& init)
    : config_(config) {
  if (!store.contains("embedding"))
    throw std::invalid_argument(
        "LinearSelector: store lacks 'embedding'; create it with the "
        "vocabulary size first");
  embedding_ = store.get("embedding");
  if (embedding_.cols() != config.embed_dim)
    throw std::invalid_argument("LinearSelector: embedding width mismatch");
  query_w_ = ensure_param(store, "selector.affine.w", config.embed_dim,
                          config.hidden, 2, Init::kXavier, init);
  query_b_ = ensure_param(store, "selector.affine.b", 1, config.hidden, 1,
                          Init::kZeros, init);
  if (config.shared_affine) {
    sent_w_ = query_w_;
    sent_b_ = query_b_;
  } else {
    sent_w_ = ensure_param(store, "selector.affine_s.w", config.embed_dim,
                           config.hidden, 2, Init::kXavier, init);
    sent_b_ = ensure_param(store, "selector.affine_s.b", 1, config.hidden, 1,
                           Init::kZeros, init);
  }
}

DifferentiableScores LinearSelector::score(const Query& query,
                                           const Document& doc) const {
  if (query.tokens.empty())
    throw std::invalid_argument("LinearSelector: empty query");
  if (doc.sentences.empty()) return {};
  Tensor query_avg = mean(gather_rows(embedding_, to_indices(query.tokens)), 0);
  Tensor query_rep = add(matmul(query_avg, query_w_), query_b_);

  std::vector<Tensor> logits;
  logits.reserve(doc.sentences.size());
  for (const auto& sentence : doc.sentences) {
    if (sentence.tokens.empty()) {
      logits.push_back(Tensor::scalar(kNegInf));
      continue;
    }
    Tensor sent_avg = mean(gather_rows(embedding_, to_indices(sentence.tokens)), 0);
    Tensor sent_rep = add(matmul(sent_avg, sent_w_), sent_b_);
    logits.push_back(dot(query_rep, sent_rep));
  }
  DifferentiableScores out;
  out.logits = concat_scalars(logits);
  out.scores.logits.assign(out.logits.value().data(),
                           out.logits.value().data() + out.logits.value().size());
  return out;
}

// --- attentive selector ------------------------------------------------------------

AttentiveSelector::AttentiveSelector(ParameterStore& store,
                                     const SelectorConfig& config, SeededRng& init)
    : config_(config) {
  if (!store.contains("embedding"))
    throw std::invalid_argument(
        "AttentiveSelector: store lacks 'embedding'; create it first");
  embedding_ = store.get("embedding");
  if (embedding_.cols() != config.embed_dim)
    throw std::invalid_argument("AttentiveSelector: embedding width mismatch");

  const Index d = config.embed_dim, h = config.hidden, a = config.att_dim;
  auto make_direction = [&](const std::string& prefix) {
    Direction dir;
    dir.wz = ensure_param(store, prefix + ".wz", d, h, 2, Init::kXavier, init);
    dir.uz = ensure_param(store, prefix + ".uz", h, h, 2, Init::kXavier, init);
    dir.bz = ensure_param(store, prefix + ".bz", 1, h, 1, Init::kZeros, init);
    dir.wr = ensure_param(store, prefix + ".wr", d, h, 2, Init::kXavier, init);
    dir.ur = ensure_param(store, prefix + ".ur", h, h, 2, Init::kXavier, init);
    dir.br = ensure_param(store, prefix + ".br", 1, h, 1, Init::kZeros, init);
    dir.wn = ensure_param(store, prefix + ".wn", d, h, 2, Init::kXavier, init);
    dir.un = ensure_param(store, prefix + ".un", h, h, 2, Init::kXavier, init);
    dir.bn = ensure_param(store, prefix + ".bn", 1, h, 1, Init::kZeros, init);
    return dir;
  };
  fwd_ = make_direction("selector.gru.fwd");
  bwd_ = make_direction("selector.gru.bwd");
  att_w1_ = ensure_param(store, "selector.att.w1", 2 * h, a, 2, Init::kXavier, init);
  att_w2_ = ensure_param(store, "selector.att.w2", 2 * h, a, 2, Init::kXavier, init);
  att_w3_ = ensure_param(store, "selector.att.w3", a, 1, 2, Init::kXavier, init);
}

Tensor AttentiveSelector::run_gru(const std::vector<TokenId>& ids) const {
  const Index h = config_.hidden;
  Tensor inputs = gather_rows(embedding_, to_indices(ids));
  const Index steps = inputs.rows();
  const Tensor ones = Tensor::matrix(Mat::Ones(1, h));

  auto sweep = [&](const Direction& dir, bool reversed) {
    std::vector<Tensor> outputs(static_cast<size_t>(steps));
    Tensor state = Tensor::matrix(Mat::Zero(1, h));
    for (Index i = 0; i < steps; ++i) {
      const Index t = reversed ? steps - 1 - i : i;
      Tensor x = gather_rows(inputs, {t});
      Tensor z = sigmoid(
          add_rowvec(add(matmul(x, dir.wz), matmul(state, dir.uz)), dir.bz));
      Tensor r = sigmoid(
          add_rowvec(add(matmul(x, dir.wr), matmul(state, dir.ur)), dir.br));
      Tensor cand = tanh(add_rowvec(
          add(matmul(x, dir.wn), matmul(mul(r, state), dir.un)), dir.bn));
      state = add(mul(sub(ones, z), cand), mul(z, state));
      outputs[static_cast<size_t>(t)] = state;
    }
    return concat_rows(outputs);
  };
  return concat_cols({sweep(fwd_, false), sweep(bwd_, true)});
}

DifferentiableScores AttentiveSelector::score(const Query& query,
                                              const Document& doc) const {
  if (query.tokens.empty())
    throw std::invalid_argument("AttentiveSelector: empty query");
  if (doc.sentences.empty()) return {};

  Tensor query_pooled = max(run_gru(query.tokens), 0);  // [2h]

  Tensor query_att = matmul(query_pooled, att_w2_);  // [att_dim]
  Tensor query_norm = sqrt(dot(query_pooled, query_pooled));

  // Each sentence is encoded independently by the shared recurrent stack,
  // so duplicate sentences receive identical scores.
  std::vector<Tensor> logits;
  logits.reserve(doc.sentences.size());
  for (const auto& sentence : doc.sentences) {
    if (sentence.tokens.empty()) {
      logits.push_back(Tensor::scalar(kNegInf));
      continue;
    }
    Tensor hs = run_gru(sentence.tokens);                         // [len, 2h]
    Tensor att = add_rowvec(matmul(hs, att_w1_), query_att);      // [len, a]
    Tensor gate = exp(flatten_vector(matmul(tanh(att), att_w3_)));  // [len]
    Tensor weighted = scale_rows(hs, gate);
    Tensor pooled = max(weighted, 0);                             // [2h]
    Tensor cosine = div(dot(pooled, query_pooled),
                        mul(sqrt(dot(pooled, pooled)), query_norm));
    logits.push_back(cosine);
  }
  DifferentiableScores out;
  out.logits = concat_scalars(logits);
  out.scores.logits.assign(out.logits.value().data(),
                           out.logits.value().data() + out.logits.value().size());
  return out;
}

}  // namespace selrank
