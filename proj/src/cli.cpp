#include "selrank/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "selrank/checkpoint.hpp"
#include "selrank/evaluation.hpp"
#include "selrank/ranker.hpp"
#include "selrank/retrieval.hpp"
#include "selrank/selectors.hpp"
#include "selrank/text.hpp"
#include "selrank/training.hpp"

namespace selrank {

namespace {

using nlohmann::json;

const std::string& require(const Config& config, const std::string& key) {
  const std::string& value = config.str(key);
  if (value.empty())
    throw std::runtime_error("config key '" + key + "' is required");
  return value;
}

Corpus load_index(const Config& config) {
  return load_corpus(require(config, "index"));
}

std::map<std::string, Query> queries_by_id(const Config& config,
                                           const Vocabulary& vocab) {
  std::map<std::string, Query> out;
  for (Query& q : load_queries(require(config, "queries"), vocab))
    out.emplace(q.query_id, std::move(q));
  return out;
}

std::vector<int> parse_cutoffs(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  if (out.empty()) throw std::runtime_error("no metric cutoffs given");
  return out;
}

RankerConfig ranker_config_from(const std::map<std::string, std::string>& header) {
  RankerConfig rc;
  rc.model_dim = std::stoll(header.at("model_dim"));
  rc.layers = std::stoll(header.at("layers"));
  rc.heads = std::stoll(header.at("heads"));
  rc.ff_dim = std::stoll(header.at("ff_dim"));
  rc.max_len = std::stoll(header.at("max_len"));
  rc.dropout = std::stod(header.at("dropout"));
  return rc;
}

SelectorConfig selector_config_from(const std::map<std::string, std::string>& header,
                                    Index embed_dim) {
  SelectorConfig sc;
  sc.embed_dim = embed_dim;
  sc.hidden = std::stoll(header.at("selector_hidden"));
  sc.att_dim = std::stoll(header.at("att_dim"));
  sc.shared_affine = header.at("shared_affine") == "true";
  return sc;
}

struct LoadedRanker {
  std::shared_ptr<ParameterStore> store;
  std::map<std::string, std::string> header;
  RankerConfig config;
  std::shared_ptr<TransformerRanker> ranker;
};

LoadedRanker load_ranker(const std::string& path) {
  LoadedRanker loaded;
  loaded.store = std::make_shared<ParameterStore>();
  loaded.header = load_checkpoint(path, *loaded.store);
  loaded.config = ranker_config_from(loaded.header);
  const size_t before = loaded.store->size();
  SeededRng unused(0);
  loaded.ranker =
      std::make_shared<TransformerRanker>(*loaded.store, loaded.config, unused);
  if (loaded.store->size() != before)
    throw std::runtime_error("checkpoint " + path +
                             " is missing ranker parameters");
  return loaded;
}

struct SelectorBundle {
  SelectorHandle handle;
  std::shared_ptr<ParameterStore> own_store;   // pipeline selector weights
  std::shared_ptr<EmbeddingTable> embeddings;  // semantic selector
};

// Builds the requested selector. Trainable selectors bind either to the
// ranker checkpoint's store (end-to-end training shares the embedding) or
// to a standalone selector checkpoint.
SelectorBundle build_selector(const Config& config, SelectorKind kind,
                              const Corpus& corpus, const LoadedRanker* ranker) {
  SelectorBundle bundle;
  bundle.handle.kind = kind;
  switch (kind) {
    case SelectorKind::kTfidf:
      bundle.handle.vocab = &corpus.vocab;
      break;
    case SelectorKind::kBm25:
      bundle.handle.bm25 = {config.num("k1"), config.num("b")};
      break;
    case SelectorKind::kSemantic:
      bundle.embeddings = std::make_shared<EmbeddingTable>(
          load_embeddings(require(config, "embeddings"), corpus.vocab));
      bundle.handle.embeddings = bundle.embeddings.get();
      break;
    case SelectorKind::kRandom:
      bundle.handle.random_rng = std::make_shared<SeededRng>(
          static_cast<std::uint64_t>(config.integer("seed")));
      break;
    case SelectorKind::kLinear:
    case SelectorKind::kAttentive: {
      ParameterStore* store = nullptr;
      SelectorConfig sel_cfg;
      SeededRng unused(0);
      if (!config.str("selector_checkpoint").empty()) {
        bundle.own_store = std::make_shared<ParameterStore>();
        auto header =
            load_checkpoint(config.str("selector_checkpoint"), *bundle.own_store);
        store = bundle.own_store.get();
        sel_cfg = selector_config_from(
            header, std::stoll(header.at("selector_embed_dim")));
      } else if (ranker && ranker->header.count("mode") &&
                 ranker->header.at("mode") == "e2e") {
        store = ranker->store.get();
        sel_cfg = selector_config_from(ranker->header, ranker->config.model_dim);
      } else {
        throw std::runtime_error(
            "trainable selector needs selector_checkpoint or an e2e ranker "
            "checkpoint");
      }
      const size_t before = store->size();
      if (kind == SelectorKind::kLinear)
        bundle.handle.linear =
            std::make_shared<LinearSelector>(*store, sel_cfg, unused);
      else
        bundle.handle.attentive =
            std::make_shared<AttentiveSelector>(*store, sel_cfg, unused);
      if (store->size() != before)
        throw std::runtime_error("checkpoint does not contain the " +
                                 to_string(kind) + " selector parameters");
      break;
    }
  }
  return bundle;
}

SelectorKind resolve_selector_kind(const Config& config, const LoadedRanker* ranker,
                                   SelectorKind fallback) {
  const std::string& name = config.str("selector");
  if (name != "auto") return selector_kind_from_string(name);
  if (ranker && ranker->header.count("selector"))
    return selector_kind_from_string(ranker->header.at("selector"));
  return fallback;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (const auto& line : lines) os << line << "\n";
}

}  // namespace

std::string to_json_line(const Explanation& explanation) {
  json sentences = json::array();
  for (const auto& s : explanation.sentences) {
    sentences.push_back(json{{"index", s.index},
                             {"text", s.text},
                             {"logit", s.logit},
                             {"p", s.prob},
                             {"selected", s.selected}});
  }
  return json{{"query_id", explanation.query_id},
              {"doc_id", explanation.doc_id},
              {"score", explanation.score},
              {"sentences", sentences}}
      .dump();
}

int cmd_ingest(const Config& config, std::ostream& status) {
  Corpus corpus = ingest_corpus(require(config, "corpus"));
  save_corpus(corpus, require(config, "index"));
  status << "ingested " << corpus.documents.size() << " documents, vocabulary "
         << corpus.vocab.size() << " tokens\n";
  return 0;
}

int cmd_retrieve(const Config& config, std::ostream& status) {
  Corpus corpus = load_index(config);
  InvertedIndex index = InvertedIndex::build(corpus);
  auto queries = queries_by_id(config, corpus.vocab);
  const std::int64_t depth = config.integer("depth");
  const Bm25Params params{config.num("k1"), config.num("b")};

  RunFile run;
  run.tag = config.str("run_tag");
  for (const auto& [qid, query] : queries) {
    auto hits = index.retrieve(query.tokens, depth, params);
    auto& ranking = run.rankings[qid];
    for (const auto& hit : hits)
      ranking.push_back(
          {corpus.documents[static_cast<size_t>(hit.doc)].doc_id, hit.score});
  }
  run.save(require(config, "run_out"));
  status << "retrieved top-" << depth << " for " << queries.size() << " queries\n";
  return 0;
}

int cmd_train(const Config& config, std::ostream& status) {
  Corpus corpus = load_index(config);
  auto query_map = queries_by_id(config, corpus.vocab);
  std::vector<Query> queries;
  queries.reserve(query_map.size());
  for (const auto& [_, q] : query_map) queries.push_back(q);
  Qrels qrels = Qrels::load(require(config, "qrels"));
  RunFile first_stage = RunFile::load(require(config, "run_in"));

  TrainConfig tc;
  tc.mode = config.str("mode") == "auto" ? TrainMode::kE2e
                                         : train_mode_from_string(config.str("mode"));
  tc.selector = config.str("selector") == "auto"
                    ? SelectorKind::kLinear
                    : selector_kind_from_string(config.str("selector"));
  tc.k = static_cast<int>(config.integer("k"));
  tc.temperature = config.num("temperature");
  tc.margin = config.num("margin");
  tc.ranker_lr = config.num("ranker_lr");
  tc.selector_lr = config.num("selector_lr");
  tc.weight_decay = config.num("weight_decay");
  tc.batch_size = config.integer("batch_size");
  tc.warmup = config.integer("warmup");
  tc.epochs = config.integer("epochs");
  tc.triples_per_query = config.integer("triples_per_query");
  tc.selector_epochs = config.integer("selector_epochs");
  tc.seed = static_cast<std::uint64_t>(config.integer("seed"));
  tc.val_fraction = config.num("val_fraction");
  tc.head_limit = config.optional_int("head_limit");
  tc.st_weight = config.str("st_weight");
  tc.ranker.model_dim = config.integer("model_dim");
  tc.ranker.layers = config.integer("layers");
  tc.ranker.heads = config.integer("heads");
  tc.ranker.ff_dim = config.integer("ff_dim");
  tc.ranker.max_len = config.integer("max_len");
  tc.ranker.dropout = config.num("dropout");
  tc.selector_config.embed_dim = config.integer("selector_embed_dim");
  tc.selector_config.hidden = config.integer("selector_hidden");
  tc.selector_config.att_dim = config.integer("att_dim");
  tc.selector_config.shared_affine = config.boolean("shared_affine");

  TrainResult result = train(tc, corpus, queries, qrels, first_stage);
  for (const auto& warning : result.warnings) status << "warning: " << warning << "\n";

  std::map<std::string, std::string> header{
      {"model_dim", std::to_string(tc.ranker.model_dim)},
      {"layers", std::to_string(tc.ranker.layers)},
      {"heads", std::to_string(tc.ranker.heads)},
      {"ff_dim", std::to_string(tc.ranker.ff_dim)},
      {"max_len", std::to_string(tc.ranker.max_len)},
      {"dropout", config.str("dropout")},
      {"mode", to_string(tc.mode)},
      {"selector", to_string(tc.selector)},
      {"k", std::to_string(tc.k)},
      {"temperature", config.str("temperature")},
      {"selector_hidden", std::to_string(tc.selector_config.hidden)},
      {"att_dim", std::to_string(tc.selector_config.att_dim)},
      {"shared_affine", tc.selector_config.shared_affine ? "true" : "false"},
      {"selector_embed_dim", std::to_string(tc.selector_config.embed_dim)},
      {"st_weight", tc.st_weight},
      {"vocab_size", std::to_string(corpus.vocab.size())},
  };
  save_checkpoint(require(config, "checkpoint_out"), result.ranker_store, header);
  if (result.selector_store) {
    std::string path = config.str("selector_checkpoint_out");
    if (path.empty()) path = config.str("checkpoint_out") + ".selector";
    save_checkpoint(path, *result.selector_store, header);
    status << "selector checkpoint: " << path << "\n";
  }
  if (!config.str("log_out").empty())
    write_lines(config.str("log_out"), result.log_lines);
  status << "best epoch " << result.best_epoch << " with validation MAP "
         << result.best_val_map << "\n";
  return 0;
}

int cmd_rank(const Config& config, std::ostream& status) {
  Corpus corpus = load_index(config);
  auto queries = queries_by_id(config, corpus.vocab);
  RunFile run_in = RunFile::load(require(config, "run_in"));
  LoadedRanker loaded = load_ranker(require(config, "checkpoint"));

  const bool no_selection = config.str("selector") == "none";
  SelectorBundle bundle;
  if (!no_selection) {
    const SelectorKind kind =
        resolve_selector_kind(config, &loaded, SelectorKind::kBm25);
    bundle = build_selector(config, kind, corpus, &loaded);
  }

  RankOptions options;
  options.k = static_cast<int>(config.integer("k"));
  options.head_limit = config.optional_int("head_limit");
  options.use_selector = !no_selection;

  RunFile run_out;
  run_out.tag = config.str("run_tag");
  for (const auto& [qid, ranking] : run_in.rankings) {
    auto it = queries.find(qid);
    if (it == queries.end())
      throw std::runtime_error("run query " + qid + " missing from query file");
    std::vector<std::string> candidates;
    candidates.reserve(ranking.size());
    for (const auto& entry : ranking) candidates.push_back(entry.doc_id);
    run_out.rankings[qid] =
        rerank(it->second, candidates, corpus,
               no_selection ? nullptr : &bundle.handle, *loaded.ranker, options);
  }
  run_out.save(require(config, "run_out"));
  status << "re-ranked " << run_in.rankings.size() << " queries\n";
  return 0;
}

int cmd_explain(const Config& config, std::ostream& out, std::ostream& status) {
  Corpus corpus = load_index(config);
  auto queries = queries_by_id(config, corpus.vocab);
  LoadedRanker loaded = load_ranker(require(config, "checkpoint"));
  const SelectorKind kind =
      resolve_selector_kind(config, &loaded, SelectorKind::kBm25);
  SelectorBundle bundle = build_selector(config, kind, corpus, &loaded);

  auto it = queries.find(require(config, "qid"));
  if (it == queries.end())
    throw std::runtime_error("unknown qid: " + config.str("qid"));
  const Query& query = it->second;
  const Document& doc = corpus.document(require(config, "docid"));

  SentenceScores scores = bundle.handle.score(query, doc);
  bool any_finite = false;
  for (double w : scores.logits)
    if (std::isfinite(w)) any_finite = true;
  if (any_finite) scores = normalize(std::move(scores));

  Summary summary = hard_select(scores, doc, static_cast<int>(config.integer("k")),
                                config.optional_int("head_limit"));

  Explanation explanation;
  explanation.query_id = query.query_id;
  explanation.doc_id = doc.doc_id;
  explanation.score = loaded.ranker->score_value(query, summary);
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    Explanation::SentenceRecord record;
    record.index = static_cast<int>(i);
    record.text = doc.sentences[i].text;
    record.logit = scores.logits[i];
    record.prob = scores.probs ? (*scores.probs)[i] : 0.0;
    record.selected = std::find(summary.indices.begin(), summary.indices.end(),
                                static_cast<int>(i)) != summary.indices.end();
    explanation.sentences.push_back(std::move(record));
  }
  out << to_json_line(explanation) << "\n";
  status << "explained " << query.query_id << "/" << doc.doc_id << "\n";
  return 0;
}

int cmd_evaluate(const Config& config, std::ostream& out, std::ostream& status) {
  RunFile run = RunFile::load(require(config, "run_in"));
  Qrels qrels = Qrels::load(require(config, "qrels"));
  const std::vector<int> cutoffs = parse_cutoffs(config.str("cutoffs"));
  MetricReport report =
      evaluate_run(run, qrels, cutoffs, config.str("gain") == "exp");
  for (const auto& warning : report.warnings) status << "warning: " << warning << "\n";
  const std::string text = format_report(report);
  if (config.str("report_out").empty()) {
    out << text;
  } else {
    std::ofstream os(config.str("report_out"));
    if (!os) throw std::runtime_error("cannot write: " + config.str("report_out"));
    os << text;
  }
  return 0;
}

int cmd_analyze(const Config& config, std::ostream& out, std::ostream& status) {
  Corpus corpus = load_index(config);
  auto queries = queries_by_id(config, corpus.vocab);
  RunFile run = RunFile::load(require(config, "run_in"));

  std::optional<LoadedRanker> loaded;
  Index max_len = config.integer("max_len");
  if (!config.str("checkpoint").empty()) {
    loaded.emplace(load_ranker(config.str("checkpoint")));
    max_len = loaded->config.max_len;
  }
  const SelectorKind kind = resolve_selector_kind(
      config, loaded ? &*loaded : nullptr, SelectorKind::kBm25);
  SelectorBundle bundle =
      build_selector(config, kind, corpus, loaded ? &*loaded : nullptr);

  const int k = static_cast<int>(config.integer("k"));
  const auto head_limit = config.optional_int("head_limit");
  const std::int64_t fixed_budget = config.integer("head_budget");

  std::vector<double> fractions;
  for (const auto& [qid, ranking] : run.rankings) {
    auto it = queries.find(qid);
    if (it == queries.end())
      throw std::runtime_error("run query " + qid + " missing from query file");
    const Query& query = it->second;
    const std::int64_t budget =
        fixed_budget >= 0
            ? fixed_budget
            : std::max<std::int64_t>(
                  0, max_len - 3 - static_cast<std::int64_t>(query.tokens.size()));
    for (const auto& entry : ranking) {
      const Document& doc = corpus.document(entry.doc_id);
      Summary summary =
          hard_select(bundle.handle.score(query, doc), doc, k, head_limit);
      fractions.push_back(missing_token_fraction(doc, summary, budget));
    }
  }
  auto cdf = missing_token_cdf(std::move(fractions));
  std::ostringstream text;
  char buf[64];
  for (const auto& [fraction, share] : cdf) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", fraction, share);
    text << buf << "\n";
  }
  if (config.str("cdf_out").empty()) {
    out << text.str();
  } else {
    std::ofstream os(config.str("cdf_out"));
    if (!os) throw std::runtime_error("cannot write: " + config.str("cdf_out"));
    os << text.str();
  }
  status << "analyzed " << cdf.size() << " distinct fractions\n";
  return 0;
}

int run_cli(int argc, char** argv) {
  const std::string usage =
      "usage: selrank <ingest|retrieve|train|rank|explain|evaluate|analyze> "
      "[--config FILE] [--key value]...\n";
  if (argc < 2) {
    std::cerr << usage;
    return 1;
  }
  const std::string command = argv[1];
  try {
    std::string config_path;
    std::map<std::string, std::string> flags;
    for (int i = 2; i < argc; ++i) {
      std::string arg = argv[i];
      if (arg.rfind("--", 0) != 0)
        throw std::runtime_error("expected --key, got: " + arg);
      arg.erase(0, 2);
      std::string value;
      const size_t eq = arg.find('=');
      if (eq != std::string::npos) {
        value = arg.substr(eq + 1);
        arg.erase(eq);
      } else {
        if (i + 1 >= argc) throw std::runtime_error("missing value for --" + arg);
        value = argv[++i];
      }
      if (arg == "config")
        config_path = value;
      else
        flags[arg] = value;
    }
    const Config config = Config::resolve(config_path, flags);
    std::istringstream rendered(config.render());
    for (std::string line; std::getline(rendered, line);)
      std::cerr << "config " << line << "\n";

    if (command == "ingest") return cmd_ingest(config, std::cerr);
    if (command == "retrieve") return cmd_retrieve(config, std::cerr);
    if (command == "train") return cmd_train(config, std::cerr);
    if (command == "rank") return cmd_rank(config, std::cerr);
    if (command == "explain") return cmd_explain(config, std::cout, std::cerr);
    if (command == "evaluate") return cmd_evaluate(config, std::cout, std::cerr);
    if (command == "analyze") return cmd_analyze(config, std::cout, std::cerr);
    std::cerr << "unknown command: " << command << "\n" << usage;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace selrank
