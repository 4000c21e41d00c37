#include "selrank/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace selrank {

std::vector<Triple> sample_triples(
    const Qrels& qrels,
    const std::map<std::string, std::vector<std::string>>& candidates,
    SeededRng& rng, std::int64_t count, std::vector<std::string>* warnings) {
  struct Pool {
    const std::string* query_id;
    std::vector<const std::string*> positives;
    std::vector<const std::string*> negatives;
  };
  std::vector<Pool> pools;
  for (const auto& [qid, docs] : candidates) {
    Pool pool{&qid, {}, {}};
    for (const std::string& doc_id : docs) {
      if (qrels.relevance(qid, doc_id) >= 1)
        pool.positives.push_back(&doc_id);
      else
        pool.negatives.push_back(&doc_id);
    }
    if (pool.positives.empty() || pool.negatives.empty()) {
      if (warnings)
        warnings->push_back("query " + qid +
                            " lacks a positive or negative candidate, skipped");
      continue;
    }
    pools.push_back(std::move(pool));
  }
  if (pools.empty())
    throw std::invalid_argument("sample_triples: no usable queries");

  std::vector<Triple> out;
  out.reserve(static_cast<size_t>(count));
  size_t next = 0;
  while (static_cast<std::int64_t>(out.size()) < count) {
    const Pool& pool = pools[next++ % pools.size()];
    Triple triple;
    triple.query_id = *pool.query_id;
    triple.positive_id = *pool.positives[rng.below(pool.positives.size())];
    triple.negative_id = *pool.negatives[rng.below(pool.negatives.size())];
    out.push_back(std::move(triple));
  }
  return out;
}

Tensor hinge_loss(const Tensor& positive_score, const Tensor& negative_score,
                  double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("hinge_loss: margin must be > 0");
  return relu(add(sub(Tensor::scalar(margin), positive_score), negative_score));
}

StepResult optimizer_step(ParameterStore& store, const AdamWConfig& config) {
  StepResult result;
  for (const auto& [name, t] : store) {
    if (t.has_grad() && !t.grad().allFinite()) {
      store.zero_grads();
      return result;  // skipped; the caller logs the event
    }
  }
  const std::int64_t step = ++store.step_count();
  result.warmup_factor =
      config.warmup > 0
          ? std::min(1.0, static_cast<double>(step) /
                              static_cast<double>(config.warmup))
          : 1.0;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));

  for (auto& [name, t] : store) {
    double lr = config.base_lr;
    for (const auto& [prefix, value] : config.prefix_lr) {
      if (name.rfind(prefix, 0) == 0) {
        lr = value;
        break;
      }
    }
    lr *= result.warmup_factor;

    const Mat grad = t.has_grad() ? t.grad() : Mat::Zero(t.rows(), t.cols()).eval();
    auto& moments = store.moments(name);
    moments.first = config.beta1 * moments.first + (1.0 - config.beta1) * grad;
    moments.second = config.beta2 * moments.second +
                     (1.0 - config.beta2) * grad.cwiseProduct(grad);
    const Mat m_hat = moments.first / bias1;
    const Mat v_hat = moments.second / bias2;
    Mat update =
        (m_hat.array() / (v_hat.array().sqrt() + config.eps)).matrix() +
        config.weight_decay * t.value();
    t.mutable_value() -= lr * update;
  }
  store.zero_grads();
  result.applied = true;
  return result;
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "truncate") return TrainMode::kTruncate;
  if (name == "pipeline") return TrainMode::kPipeline;
  if (name == "e2e") return TrainMode::kE2e;
  throw std::invalid_argument("unknown training mode: " + name);
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kTruncate: return "truncate";
    case TrainMode::kPipeline: return "pipeline";
    case TrainMode::kE2e: return "e2e";
  }
  return "?";
}

Summary full_summary(const Document& doc) {
  Summary summary;
  summary.k = static_cast<int>(doc.sentences.size());
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    summary.indices.push_back(static_cast<int>(i));
    const auto& tokens = doc.sentences[i].tokens;
    summary.token_ids.insert(summary.token_ids.end(), tokens.begin(), tokens.end());
    summary.token_origin.insert(summary.token_origin.end(), tokens.size(),
                                static_cast<int>(i));
  }
  return summary;
}

Summary summary_from_indices(const std::vector<int>& indices, const Document& doc,
                             int k) {
  Summary summary;
  summary.k = k;
  summary.indices = indices;
  std::sort(summary.indices.begin(), summary.indices.end());
  for (int i : summary.indices) {
    const auto& tokens = doc.sentences.at(static_cast<size_t>(i)).tokens;
    summary.token_ids.insert(summary.token_ids.end(), tokens.begin(), tokens.end());
    summary.token_origin.insert(summary.token_origin.end(), tokens.size(), i);
  }
  return summary;
}

std::vector<RunEntry> rerank(const Query& query,
                             const std::vector<std::string>& candidate_ids,
                             const Corpus& corpus, const SelectorHandle* selector,
                             const TransformerRanker& ranker,
                             const RankOptions& options) {
  std::vector<RunEntry> entries;
  entries.reserve(candidate_ids.size());
  for (const std::string& doc_id : candidate_ids) {
    const Document& doc = corpus.document(doc_id);
    Summary summary;
    if (options.use_selector && selector) {
      summary = hard_select(selector->score(query, doc), doc, options.k,
                            options.head_limit);
    } else {
      summary = full_summary(doc);
    }
    entries.push_back({doc_id, ranker.score_value(query, summary)});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const RunEntry& a, const RunEntry& b) {
                     return a.score > b.score;
                   });
  return entries;
}

// --- train ------------------------------------------------------------------------

namespace {

using nlohmann::json;

struct TrainContext {
  const TrainConfig& config;
  const Corpus& corpus;
  const Qrels& qrels;
  std::map<std::string, const Query*> query_by_id;
  std::map<std::string, std::vector<std::string>> train_candidates;
  std::vector<std::string> train_qids;
  std::vector<std::string> val_qids;
  std::map<std::string, std::vector<std::string>> all_candidates;
};

// Collects eligible (finite) sentence positions of differentiable scores,
// honoring an optional head limit by masking logits to -inf.
struct EligibleLogits {
  Tensor logits;
  int eligible = 0;
};

EligibleLogits apply_head_limit(const DifferentiableScores& scores,
                                std::optional<int> head_limit) {
  EligibleLogits out;
  if (!scores.logits.defined()) return out;
  const auto& raw = scores.scores.logits;
  const int n = static_cast<int>(raw.size());
  const int limit = head_limit ? std::min(n, std::max(0, *head_limit)) : n;
  bool masked = false;
  std::vector<double> mask(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const bool beyond = i >= limit;
    if (beyond) {
      mask[static_cast<size_t>(i)] = -std::numeric_limits<double>::infinity();
      masked = true;
    } else if (std::isfinite(raw[static_cast<size_t>(i)])) {
      ++out.eligible;
    }
  }
  out.logits = masked ? add(scores.logits, Tensor::row(mask)) : scores.logits;
  return out;
}

// Weak-label selector training for the pipeline regime: sentences of
// relevant documents holding at least one query term are positives, their
// other sentences negatives; a max-margin loss on the selector logits.
void train_pipeline_selector(
    const TrainConfig& config, const Corpus& corpus, const Qrels& qrels,
    const std::map<std::string, std::vector<std::string>>& train_candidates,
    const std::map<std::string, const Query*>& query_by_id,
    ParameterStore& store, SeededRng& init_rng, SeededRng& pair_rng,
    std::vector<std::string>& log_lines) {
  store.create("embedding", corpus.vocab.size(), config.selector_config.embed_dim,
               2, Init::kXavier, init_rng);
  std::shared_ptr<LinearSelector> linear;
  std::shared_ptr<AttentiveSelector> attentive;
  if (config.selector == SelectorKind::kLinear)
    linear = std::make_shared<LinearSelector>(store, config.selector_config,
                                              init_rng);
  else
    attentive = std::make_shared<AttentiveSelector>(store, config.selector_config,
                                                    init_rng);

  struct Group {
    const Query* query;
    const Document* doc;
    std::vector<std::pair<int, int>> pairs;  // (positive, negative) sentence
  };
  std::vector<Group> groups;
  for (const auto& [qid, docs] : train_candidates) {
    const Query* query = query_by_id.at(qid);
    std::unordered_set<TokenId> terms(query->tokens.begin(), query->tokens.end());
    for (const std::string& doc_id : docs) {
      if (qrels.relevance(qid, doc_id) < 1) continue;
      const Document& doc = corpus.document(doc_id);
      std::vector<int> positives, negatives;
      for (size_t s = 0; s < doc.sentences.size(); ++s) {
        if (doc.sentences[s].tokens.empty()) continue;
        bool match = false;
        for (TokenId t : doc.sentences[s].tokens)
          if (terms.count(t)) {
            match = true;
            break;
          }
        (match ? positives : negatives).push_back(static_cast<int>(s));
      }
      if (positives.empty() || negatives.empty()) continue;
      Group group{query, &doc, {}};
      const size_t n_pairs = std::min<size_t>(4, positives.size() * negatives.size());
      for (size_t i = 0; i < n_pairs; ++i)
        group.pairs.emplace_back(positives[pair_rng.below(positives.size())],
                                 negatives[pair_rng.below(negatives.size())]);
      groups.push_back(std::move(group));
    }
  }
  if (groups.empty()) {
    log_lines.push_back(
        json{{"event", "selector_training_skipped_no_weak_labels"}}.dump());
    return;
  }

  AdamWConfig adamw;
  adamw.base_lr = config.selector_lr;
  adamw.weight_decay = config.weight_decay;
  adamw.warmup = config.warmup;

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < config.selector_epochs; ++epoch) {
    for (const Group& group : groups) {
      DifferentiableScores scored = linear
                                        ? linear->score(*group.query, *group.doc)
                                        : attentive->score(*group.query, *group.doc);
      std::vector<Tensor> losses;
      for (const auto& [pos, neg] : group.pairs)
        losses.push_back(hinge_loss(element(scored.logits, pos),
                                    element(scored.logits, neg), config.margin));
      Tensor loss = mean_all(concat_scalars(losses));
      backward(loss);
      StepResult result = optimizer_step(store, adamw);
      ++step;
      if (result.applied)
        log_lines.push_back(json{{"selector_step", step},
                                 {"selector_epoch", epoch},
                                 {"loss", loss.item()}}
                                .dump());
      else
        log_lines.push_back(json{{"selector_step", step},
                                 {"event", "skipped_nonfinite_gradient"}}
                                .dump());
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Corpus& corpus,
                  const std::vector<Query>& queries, const Qrels& qrels,
                  const RunFile& first_stage) {
  if (config.mode == TrainMode::kE2e && !selector_is_trainable(config.selector))
    throw std::invalid_argument("train: e2e mode requires a differentiable "
                                "selector (linear or attentive), got " +
                                to_string(config.selector));
  if (config.k < 1) throw std::invalid_argument("train: k must be >= 1");
  if (!(config.temperature > 0.0))
    throw std::invalid_argument("train: temperature must be > 0");

  TrainContext ctx{config, corpus, qrels};
  for (const Query& q : queries) ctx.query_by_id[q.query_id] = &q;
  for (const auto& [qid, ranking] : first_stage.rankings) {
    if (!ctx.query_by_id.count(qid)) continue;
    auto& docs = ctx.all_candidates[qid];
    for (const RunEntry& entry : ranking) {
      if (!corpus.has_document(entry.doc_id))
        throw std::invalid_argument("train: run doc " + entry.doc_id +
                                    " missing from corpus");
      docs.push_back(entry.doc_id);
    }
  }

  TrainResult result;

  std::vector<std::string> usable;
  for (const auto& [qid, docs] : ctx.all_candidates) {
    std::int64_t pos = 0, neg = 0;
    for (const auto& d : docs) (qrels.relevance(qid, d) >= 1 ? pos : neg)++;
    if (pos > 0 && neg > 0)
      usable.push_back(qid);
    else
      result.warnings.push_back("query " + qid + " unusable for training");
  }
  const auto n_val = static_cast<std::int64_t>(
      std::ceil(config.val_fraction * static_cast<double>(usable.size())));
  if (n_val <= 0 || n_val >= static_cast<std::int64_t>(usable.size()))
    throw std::invalid_argument(
        "train: validation split is empty (need at least two usable queries "
        "and 0 < val_fraction < 1)");
  ctx.train_qids.assign(usable.begin(), usable.end() - n_val);
  ctx.val_qids.assign(usable.end() - n_val, usable.end());
  for (const auto& qid : ctx.train_qids)
    ctx.train_candidates[qid] = ctx.all_candidates[qid];

  SeededRng master(config.seed);
  SeededRng init_rng = master.fork(1);
  SeededRng triple_rng = master.fork(2);
  SeededRng gumbel_rng = master.fork(3);
  SeededRng dropout_rng = master.fork(4);
  SeededRng selector_init = master.fork(5);
  SeededRng pair_rng = master.fork(6);

  ParameterStore& store = result.ranker_store;
  store.create("embedding", corpus.vocab.size(), config.ranker.model_dim, 2,
               Init::kXavier, init_rng);
  TransformerRanker ranker(store, config.ranker, init_rng);

  std::shared_ptr<LinearSelector> linear;
  std::shared_ptr<AttentiveSelector> attentive;
  if (config.mode == TrainMode::kE2e) {
    SelectorConfig sel_cfg = config.selector_config;
    sel_cfg.embed_dim = config.ranker.model_dim;  // shared embedding E
    if (config.selector == SelectorKind::kLinear)
      linear = std::make_shared<LinearSelector>(store, sel_cfg, init_rng);
    else
      attentive = std::make_shared<AttentiveSelector>(store, sel_cfg, init_rng);
  }

  AdamWConfig adamw;
  adamw.base_lr = config.ranker_lr;
  adamw.prefix_lr = {{"selector.", config.selector_lr}};
  adamw.weight_decay = config.weight_decay;
  adamw.warmup = config.warmup;

  auto log = [&](json record) { result.log_lines.push_back(record.dump()); };

  // Train-regime forward for one document.
  auto doc_score = [&](const Query& query, const Document& doc) -> Tensor {
    RankerForwardOptions options;
    options.training = true;
    options.dropout_rng = &dropout_rng;
    if (config.mode != TrainMode::kE2e) {
      return ranker.score(
          assemble_input(query, full_summary(doc), config.ranker.max_len),
          options);
    }
    DifferentiableScores scored =
        linear ? linear->score(query, doc) : attentive->score(query, doc);
    EligibleLogits masked = apply_head_limit(scored, config.head_limit);
    if (masked.eligible == 0) {
      return ranker.score(assemble_input(query, Summary{}, config.ranker.max_len),
                          options);
    }
    const int k_eff = std::min(config.k, masked.eligible);
    RelaxedSubset subset =
        subset_sample(masked.logits, k_eff, config.temperature, gumbel_rng);
    Summary summary = summary_from_indices(subset.hard_indices, doc, k_eff);
    std::vector<std::pair<int, Tensor>> weights =
        config.st_weight == "softmax"
            ? softmax_sentence_weights(masked.logits, summary)
            : khot_sentence_weights(subset, summary);
    options.sentence_weights = &weights;
    return ranker.score(assemble_input(query, summary, config.ranker.max_len),
                        options);
  };

  // Validation: MAP of the inference-path ranking over the held-out split.
  auto validate = [&]() {
    SelectorHandle handle;
    if (config.mode == TrainMode::kE2e) {
      handle.kind = config.selector;
      handle.linear = linear;
      handle.attentive = attentive;
    }
    RankOptions options;
    options.k = config.k;
    options.head_limit = config.head_limit;
    options.use_selector = config.mode == TrainMode::kE2e;
    double sum = 0.0;
    for (const auto& qid : ctx.val_qids) {
      const Query& query = *ctx.query_by_id.at(qid);
      auto ranking = rerank(query, ctx.all_candidates.at(qid), corpus,
                            options.use_selector ? &handle : nullptr, ranker,
                            options);
      sum += average_precision(ranking, qrels.by_query().at(qid));
    }
    return sum / static_cast<double>(ctx.val_qids.size());
  };

  std::int64_t global_step = 0;
  std::map<std::string, Mat> best_values = store.snapshot_values();
  const std::int64_t triples_per_epoch =
      config.triples_per_query * static_cast<std::int64_t>(ctx.train_qids.size());

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<Triple> triples = sample_triples(
        qrels, ctx.train_candidates, triple_rng, triples_per_epoch, nullptr);
    for (size_t start = 0; start < triples.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(triples.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<Tensor> losses;
      for (size_t i = start; i < end; ++i) {
        const Triple& triple = triples[i];
        const Query& query = *ctx.query_by_id.at(triple.query_id);
        Tensor positive = doc_score(query, corpus.document(triple.positive_id));
        Tensor negative = doc_score(query, corpus.document(triple.negative_id));
        losses.push_back(hinge_loss(positive, negative, config.margin));
      }
      Tensor loss = mean_all(concat_scalars(losses));
      backward(loss);
      StepResult step = optimizer_step(store, adamw);
      ++global_step;
      if (step.applied) {
        log(json{{"step", global_step},
                 {"epoch", epoch},
                 {"loss", loss.item()},
                 {"lr", adamw.base_lr * step.warmup_factor}});
      } else {
        log(json{{"step", global_step}, {"event", "skipped_nonfinite_gradient"}});
      }
    }
    const double val_map = validate();
    log(json{{"epoch", epoch}, {"val_map", val_map}});
    if (val_map > result.best_val_map || result.best_epoch < 0) {
      result.best_val_map = val_map;
      result.best_epoch = epoch;
      best_values = store.snapshot_values();
    }
  }
  store.restore_values(best_values);
  log(json{{"best_epoch", result.best_epoch},
           {"best_val_map", result.best_val_map}});

  if (config.mode == TrainMode::kPipeline && selector_is_trainable(config.selector)) {
    result.selector_store.emplace();
    train_pipeline_selector(config, corpus, qrels, ctx.train_candidates,
                            ctx.query_by_id, *result.selector_store,
                            selector_init, pair_rng, result.log_lines);
  }
  return result;
}

}  // namespace selrank
