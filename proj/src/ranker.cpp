#include "selrank/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace selrank {

namespace {

Tensor ensure_param(ParameterStore& store, const std::string& name, Index rows,
                    Index cols, int rank, Init init, SeededRng& rng) {
  if (store.contains(name)) return store.get(name);
  return store.create(name, rows, cols, rank, init, rng);
}

}  // namespace

RankerInput assemble_input(const Query& query, const Summary& summary,
                           Index max_len) {
  const Index query_len = static_cast<Index>(query.tokens.size());
  if (query_len + 3 > max_len)
    throw std::invalid_argument("assemble_input: query alone exceeds max_len - 3");

  RankerInput input;
  input.ids.push_back(Vocabulary::kCls);
  input.sentence_origin.push_back(-1);
  for (TokenId t : query.tokens) {
    input.ids.push_back(t);
    input.sentence_origin.push_back(-1);
  }
  input.ids.push_back(Vocabulary::kSep);
  input.sentence_origin.push_back(-1);

  const Index budget = max_len - 3 - query_len;
  const Index take =
      std::min<Index>(budget, static_cast<Index>(summary.token_ids.size()));
  for (Index i = 0; i < take; ++i) {
    input.ids.push_back(summary.token_ids[static_cast<size_t>(i)]);
    input.sentence_origin.push_back(summary.token_origin[static_cast<size_t>(i)]);
  }
  input.ids.push_back(Vocabulary::kSep);
  input.sentence_origin.push_back(-1);
  return input;
}

TransformerRanker::TransformerRanker(ParameterStore& store,
                                     const RankerConfig& config, SeededRng& init)
    : config_(config) {
  if (config.model_dim % config.heads != 0)
    throw std::invalid_argument("TransformerRanker: model_dim must divide by heads");
  if (!store.contains("embedding"))
    throw std::invalid_argument(
        "TransformerRanker: store lacks 'embedding'; create it with the "
        "vocabulary size first");
  embedding_ = store.get("embedding");
  if (embedding_.cols() != config.model_dim)
    throw std::invalid_argument("TransformerRanker: embedding width mismatch");

  const Index d = config.model_dim, f = config.ff_dim;
  positions_ = ensure_param(store, "ranker.pos", config.max_len, d, 2,
                            Init::kXavier, init);
  for (Index l = 0; l < config.layers; ++l) {
    const std::string p = "ranker.l" + std::to_string(l);
    Layer layer;
    layer.wq = ensure_param(store, p + ".attn.wq", d, d, 2, Init::kXavier, init);
    layer.bq = ensure_param(store, p + ".attn.bq", 1, d, 1, Init::kZeros, init);
    layer.wk = ensure_param(store, p + ".attn.wk", d, d, 2, Init::kXavier, init);
    layer.bk = ensure_param(store, p + ".attn.bk", 1, d, 1, Init::kZeros, init);
    layer.wv = ensure_param(store, p + ".attn.wv", d, d, 2, Init::kXavier, init);
    layer.bv = ensure_param(store, p + ".attn.bv", 1, d, 1, Init::kZeros, init);
    layer.wo = ensure_param(store, p + ".attn.wo", d, d, 2, Init::kXavier, init);
    layer.bo = ensure_param(store, p + ".attn.bo", 1, d, 1, Init::kZeros, init);
    layer.ln1_gain = ensure_param(store, p + ".ln1.gain", 1, d, 1, Init::kOnes, init);
    layer.ln1_bias = ensure_param(store, p + ".ln1.bias", 1, d, 1, Init::kZeros, init);
    layer.ff_w1 = ensure_param(store, p + ".ff.w1", d, f, 2, Init::kXavier, init);
    layer.ff_b1 = ensure_param(store, p + ".ff.b1", 1, f, 1, Init::kZeros, init);
    layer.ff_w2 = ensure_param(store, p + ".ff.w2", f, d, 2, Init::kXavier, init);
    layer.ff_b2 = ensure_param(store, p + ".ff.b2", 1, d, 1, Init::kZeros, init);
    layer.ln2_gain = ensure_param(store, p + ".ln2.gain", 1, d, 1, Init::kOnes, init);
    layer.ln2_bias = ensure_param(store, p + ".ln2.bias", 1, d, 1, Init::kZeros, init);
    layers_.push_back(std::move(layer));
  }
  head_w_ = ensure_param(store, "ranker.head.w", 1, d, 1, Init::kXavier, init);
  head_b_ = ensure_param(store, "ranker.head.b", 1, 1, 0, Init::kZeros, init);
}

Tensor TransformerRanker::score(const RankerInput& input,
                                const RankerForwardOptions& options) const {
  const Index total = static_cast<Index>(input.ids.size());
  if (total > config_.max_len)
    throw std::invalid_argument("TransformerRanker: input exceeds max_len");
  for (TokenId id : input.ids)
    if (id < 0 || static_cast<Index>(id) >= embedding_.rows())
      throw std::invalid_argument("TransformerRanker: unknown token id " +
                                  std::to_string(id));

  // Embed in contiguous runs per sentence origin so each selected
  // sentence's block can pass through the straight-through coupling.
  std::vector<Tensor> blocks;
  size_t at = 0;
  while (at < input.ids.size()) {
    size_t end = at + 1;
    while (end < input.ids.size() &&
           input.sentence_origin[end] == input.sentence_origin[at])
      ++end;
    std::vector<Index> rows;
    rows.reserve(end - at);
    for (size_t i = at; i < end; ++i)
      rows.push_back(static_cast<Index>(input.ids[i]));
    Tensor block = gather_rows(embedding_, std::move(rows));
    const int origin = input.sentence_origin[at];
    if (origin >= 0 && options.sentence_weights) {
      for (const auto& [sentence, weight] : *options.sentence_weights) {
        if (sentence == origin) {
          block = options.straight_through ? straight_through_scale(block, weight)
                                           : mul_scalar(block, weight);
          break;
        }
      }
    }
    blocks.push_back(std::move(block));
    at = end;
  }

  std::vector<Index> position_rows(static_cast<size_t>(total));
  for (Index i = 0; i < total; ++i) position_rows[static_cast<size_t>(i)] = i;
  Tensor x = add(concat_rows(blocks), gather_rows(positions_, position_rows));

  const Index head_dim = config_.model_dim / config_.heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (const Layer& layer : layers_) {
    Tensor q = add_rowvec(matmul(x, layer.wq), layer.bq);
    Tensor k = add_rowvec(matmul(x, layer.wk), layer.bk);
    Tensor v = add_rowvec(matmul(x, layer.wv), layer.bv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(config_.heads));
    for (Index h = 0; h < config_.heads; ++h) {
      Tensor qh = slice_cols(q, h * head_dim, head_dim);
      Tensor kh = slice_cols(k, h * head_dim, head_dim);
      Tensor vh = slice_cols(v, h * head_dim, head_dim);
      Tensor attn = softmax(scale(matmul(qh, transpose(kh)), attn_scale));
      heads.push_back(matmul(attn, vh));
    }
    Tensor attended = add_rowvec(matmul(concat_cols(heads), layer.wo), layer.bo);
    x = layer_norm(add(x, attended), layer.ln1_gain, layer.ln1_bias);
    Tensor hidden = relu(add_rowvec(matmul(x, layer.ff_w1), layer.ff_b1));
    Tensor ff = add_rowvec(matmul(hidden, layer.ff_w2), layer.ff_b2);
    x = layer_norm(add(x, ff), layer.ln2_gain, layer.ln2_bias);
  }

  Tensor cls = flatten_vector(gather_rows(x, {0}));
  if (options.training && config_.dropout > 0.0) {
    if (!options.dropout_rng)
      throw std::invalid_argument("TransformerRanker: training needs a dropout rng");
    cls = dropout(cls, 1.0 - config_.dropout, *options.dropout_rng, true);
  }
  return sigmoid(add(dot(cls, head_w_), head_b_));
}

double TransformerRanker::score_value(const Query& query,
                                      const Summary& summary) const {
  const RankerInput input = assemble_input(query, summary, config_.max_len);
  return score(input, {}).item();
}

std::vector<std::pair<int, Tensor>> khot_sentence_weights(
    const RelaxedSubset& subset, const Summary& summary) {
  std::vector<std::pair<int, Tensor>> out;
  out.reserve(summary.indices.size());
  for (int s : summary.indices)
    out.emplace_back(s, clamp(element(subset.relaxed, s), 0.0, 1.0));
  return out;
}

std::vector<std::pair<int, Tensor>> softmax_sentence_weights(
    const Tensor& logits, const Summary& summary) {
  Tensor probs = softmax(logits);
  std::vector<std::pair<int, Tensor>> out;
  out.reserve(summary.indices.size());
  for (int s : summary.indices) out.emplace_back(s, element(probs, s));
  return out;
}

}  // namespace selrank
