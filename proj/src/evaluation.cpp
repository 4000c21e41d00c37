#include "selrank/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace selrank {

void Qrels::add(const std::string& query_id, const std::string& doc_id,
                int relevance) {
  auto& docs = judgments_[query_id];
  if (docs.count(doc_id))
    throw std::invalid_argument("qrels: duplicate pair " + query_id + "/" + doc_id);
  docs.emplace(doc_id, relevance);
}

int Qrels::relevance(const std::string& query_id, const std::string& doc_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

bool Qrels::has_query(const std::string& query_id) const {
  return judgments_.count(query_id) != 0;
}

std::int64_t Qrels::relevant_count(const std::string& query_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  std::int64_t n = 0;
  for (const auto& [_, rel] : q->second)
    if (rel >= 1) ++n;
  return n;
}

Qrels Qrels::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open qrels: " + path);
  Qrels out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string qid, zero, docid;
    int rel;
    if (!(ls >> qid >> zero >> docid >> rel))
      throw std::runtime_error("qrels line " + std::to_string(line_no) +
                               ": expected `qid 0 docid rel`");
    out.add(qid, docid, rel);
  }
  return out;
}

void Qrels::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write qrels: " + path);
  for (const auto& [qid, docs] : judgments_)
    for (const auto& [docid, rel] : docs)
      os << qid << " 0 " << docid << " " << rel << "\n";
}

namespace {

std::string format_score(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6e", value);
  return buf;
}

}  // namespace

RunFile RunFile::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open run file: " + path);
  RunFile out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string qid, q0, docid, tag;
    std::int64_t rank;
    double score;
    if (!(ls >> qid >> q0 >> docid >> rank >> score >> tag))
      throw std::runtime_error("run line " + std::to_string(line_no) +
                               ": expected `qid Q0 docid rank score tag`");
    auto& ranking = out.rankings[qid];
    if (rank != static_cast<std::int64_t>(ranking.size()) + 1)
      throw std::runtime_error("run line " + std::to_string(line_no) +
                               ": ranks must be contiguous from 1");
    if (!ranking.empty() && score > ranking.back().score)
      throw std::runtime_error("run line " + std::to_string(line_no) +
                               ": scores must be non-increasing");
    for (const auto& e : ranking)
      if (e.doc_id == docid)
        throw std::runtime_error("run line " + std::to_string(line_no) +
                                 ": duplicate doc " + docid);
    ranking.push_back({docid, score});
    out.tag = tag;
  }
  return out;
}

void RunFile::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write run file: " + path);
  for (const auto& [qid, ranking] : rankings) {
    std::int64_t rank = 1;
    for (const auto& entry : ranking) {
      os << qid << " Q0 " << entry.doc_id << " " << rank << " "
         << format_score(entry.score) << " " << tag << "\n";
      ++rank;
    }
  }
}

double average_precision(std::span<const RunEntry> ranking,
                         const std::map<std::string, int>& judged) {
  std::int64_t total_relevant = 0;
  for (const auto& [_, rel] : judged)
    if (rel >= 1) ++total_relevant;
  if (total_relevant == 0) return 0.0;

  double sum = 0.0;
  std::int64_t hits = 0;
  for (size_t i = 0; i < ranking.size(); ++i) {
    auto it = judged.find(ranking[i].doc_id);
    if (it != judged.end() && it->second >= 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_relevant);
}

double ndcg_at_k(std::span<const RunEntry> ranking,
                 const std::map<std::string, int>& judged, int k,
                 bool exponential_gain) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  auto gain = [exponential_gain](int rel) {
    return exponential_gain ? std::pow(2.0, rel) - 1.0
                            : static_cast<double>(rel);
  };
  double dcg = 0.0;
  for (size_t i = 0; i < ranking.size() && i < static_cast<size_t>(k); ++i) {
    auto it = judged.find(ranking[i].doc_id);
    if (it == judged.end()) continue;
    dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<int> ideal;
  ideal.reserve(judged.size());
  for (const auto& [_, rel] : judged) ideal.push_back(rel);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (size_t i = 0; i < ideal.size() && i < static_cast<size_t>(k); ++i)
    idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

double mrr(std::span<const RunEntry> ranking,
           const std::map<std::string, int>& judged) {
  for (size_t i = 0; i < ranking.size(); ++i) {
    auto it = judged.find(ranking[i].doc_id);
    if (it != judged.end() && it->second >= 1)
      return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

MetricReport evaluate_run(const RunFile& run, const Qrels& qrels,
                          std::span<const int> cutoffs,
                          bool exponential_gain) {
  MetricReport report;
  report.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  report.mean.query_id = "all";
  report.mean.ndcg.assign(cutoffs.size(), 0.0);

  for (const auto& [qid, ranking] : run.rankings) {
    if (!qrels.has_query(qid)) {
      report.warnings.push_back("query " + qid + " absent from qrels, skipped");
      continue;
    }
    if (qrels.relevant_count(qid) == 0) continue;  // excluded from means
    const auto& judged = qrels.by_query().at(qid);
    MetricReport::Row row;
    row.query_id = qid;
    row.ap = average_precision(ranking, judged);
    row.mrr = mrr(ranking, judged);
    for (int k : cutoffs)
      row.ndcg.push_back(ndcg_at_k(ranking, judged, k, exponential_gain));
    report.per_query.push_back(std::move(row));
  }
  const double n = static_cast<double>(report.per_query.size());
  for (const auto& row : report.per_query) {
    report.mean.ap += row.ap / n;
    report.mean.mrr += row.mrr / n;
    for (size_t c = 0; c < row.ndcg.size(); ++c)
      report.mean.ndcg[c] += row.ndcg[c] / n;
  }
  return report;
}

std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os << "qid\tap";
  for (int k : report.cutoffs) os << "\tndcg@" << k;
  os << "\tmrr\n";
  char buf[32];
  auto emit = [&](const MetricReport::Row& row) {
    os << row.query_id;
    std::snprintf(buf, sizeof(buf), "%.4f", row.ap);
    os << "\t" << buf;
    for (double v : row.ndcg) {
      std::snprintf(buf, sizeof(buf), "%.4f", v);
      os << "\t" << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f", row.mrr);
    os << "\t" << buf << "\n";
  };
  for (const auto& row : report.per_query) emit(row);
  emit(report.mean);
  return os.str();
}

double missing_token_fraction(const Document& doc, const Summary& summary,
                              std::int64_t head_budget) {
  if (head_budget < 0)
    throw std::invalid_argument("missing_token_fraction: negative budget");
  if (summary.token_ids.empty()) return 0.0;

  std::vector<std::int64_t> offsets(doc.sentences.size() + 1, 0);
  for (size_t i = 0; i < doc.sentences.size(); ++i)
    offsets[i + 1] =
        offsets[i] + static_cast<std::int64_t>(doc.sentences[i].tokens.size());

  std::int64_t missing = 0, total = 0;
  for (int s : summary.indices) {
    const std::int64_t begin = offsets[static_cast<size_t>(s)];
    const std::int64_t end = offsets[static_cast<size_t>(s) + 1];
    total += end - begin;
    missing += std::max<std::int64_t>(0, end - std::max(begin, head_budget));
  }
  return static_cast<double>(missing) / static_cast<double>(total);
}

std::vector<std::pair<double, double>> missing_token_cdf(
    std::vector<double> fractions) {
  std::vector<std::pair<double, double>> out;
  if (fractions.empty()) return out;
  std::sort(fractions.begin(), fractions.end());
  const double n = static_cast<double>(fractions.size());
  for (size_t i = 0; i < fractions.size(); ++i) {
    if (i + 1 < fractions.size() && fractions[i + 1] == fractions[i]) continue;
    out.emplace_back(fractions[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

}  // namespace selrank
