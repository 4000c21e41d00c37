#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "selrank/config.hpp"

namespace selrank {

// Rationale record for one (query, document) pair. The final score is
// computed from exactly the selected sentences, so re-scoring the flagged
// sentences reproduces it bit for bit.
struct Explanation {
  std::string query_id;
  std::string doc_id;
  double score = 0.0;
  struct SentenceRecord {
    int index = 0;
    std::string text;
    double logit = 0.0;  // -inf (excluded sentence) serializes as null
    double prob = 0.0;
    bool selected = false;
  };
  std::vector<SentenceRecord> sentences;
};

std::string to_json_line(const Explanation& explanation);

// Subcommand entry points; primary output goes to `out`, progress notes to
// `status`. Exceptions carry the error message; run_cli turns them into a
// nonzero exit code.
int cmd_ingest(const Config& config, std::ostream& status);
int cmd_retrieve(const Config& config, std::ostream& status);
int cmd_train(const Config& config, std::ostream& status);
int cmd_rank(const Config& config, std::ostream& status);
int cmd_explain(const Config& config, std::ostream& out, std::ostream& status);
int cmd_evaluate(const Config& config, std::ostream& out, std::ostream& status);
int cmd_analyze(const Config& config, std::ostream& out, std::ostream& status);

int run_cli(int argc, char** argv);

}  // namespace selrank
