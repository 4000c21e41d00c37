#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selrank/evaluation.hpp"
#include "selrank/param_store.hpp"
#include "selrank/ranker.hpp"
#include "selrank/retrieval.hpp"
#include "selrank/selectors.hpp"
#include "selrank/subset_sampling.hpp"
#include "selrank/text.hpp"

namespace selrank {

struct Triple {
  std::string query_id;
  std::string positive_id;  // strictly more relevant than the negative
  std::string negative_id;
};

// Round-robin over usable queries so each is represented evenly; within a
// query, a uniform positive (rel >= 1) and negative (rel 0) pair from its
// candidate list. Queries lacking either side are skipped with a warning.
std::vector<Triple> sample_triples(
    const Qrels& qrels,
    const std::map<std::string, std::vector<std::string>>& candidates,
    SeededRng& rng, std::int64_t count,
    std::vector<std::string>* warnings = nullptr);

// L = max(0, margin - pos + neg), on the graph.
Tensor hinge_loss(const Tensor& positive_score, const Tensor& negative_score,
                  double margin);

// Adaptive moments with decoupled weight decay and linear warmup. Distinct
// learning rates may be attached by parameter-name prefix (first match
// wins); unmatched parameters use base_lr.
struct AdamWConfig {
  double base_lr = 1e-3;
  std::vector<std::pair<std::string, double>> prefix_lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t warmup = 100;
};

struct StepResult {
  bool applied = false;  // false when a non-finite gradient skipped the step
  double warmup_factor = 1.0;
};

// One update over every parameter in the store; missing gradients count as
// zero. Gradients are cleared afterwards either way.
StepResult optimizer_step(ParameterStore& store, const AdamWConfig& config);

enum class TrainMode { kTruncate, kPipeline, kE2e };

TrainMode train_mode_from_string(const std::string& name);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::kE2e;
  SelectorKind selector = SelectorKind::kLinear;
  int k = 20;
  double temperature = 1.0;
  double margin = 0.2;
  double ranker_lr = 1e-3;
  double selector_lr = 1e-3;
  double weight_decay = 0.01;
  std::int64_t batch_size = 8;
  std::int64_t warmup = 100;
  std::int64_t epochs = 10;
  std::int64_t triples_per_query = 8;
  std::int64_t selector_epochs = 5;  // pipeline weak-label training
  std::uint64_t seed = 42;
  double val_fraction = 0.2;
  std::optional<int> head_limit;
  std::string st_weight = "khot";  // or "softmax": Eq.-13 coupling source
  RankerConfig ranker;
  SelectorConfig selector_config;
};

struct TrainResult {
  ParameterStore ranker_store;  // ranker (+ selector in e2e mode)
  std::optional<ParameterStore> selector_store;  // pipeline-trained selector
  std::vector<std::string> log_lines;            // line-delimited records
  double best_val_map = 0.0;
  std::int64_t best_epoch = -1;
  std::vector<std::string> warnings;
};

TrainResult train(const TrainConfig& config, const Corpus& corpus,
                  const std::vector<Query>& queries, const Qrels& qrels,
                  const RunFile& first_stage);

// --- inference path ---------------------------------------------------------------

// Summary covering the whole document in order (the truncation regime;
// the ranker's max_len does the cutting).
Summary full_summary(const Document& doc);

// Summary from explicitly chosen sentence indices.
Summary summary_from_indices(const std::vector<int>& indices, const Document& doc,
                             int k);

struct RankOptions {
  int k = 20;
  std::optional<int> head_limit;
  bool use_selector = true;  // false reproduces the truncation regime
};

// Inference for one query over a candidate list: selector scores ->
// hard_select -> ranker score; descending scores, stable ties.
std::vector<RunEntry> rerank(const Query& query,
                             const std::vector<std::string>& candidate_ids,
                             const Corpus& corpus, const SelectorHandle* selector,
                             const TransformerRanker& ranker,
                             const RankOptions& options);

}  // namespace selrank
