#include <doctest.h>

#include <cmath>
#include <limits>

#include "selrank/gradcheck.hpp"
#include "selrank/selectors.hpp"
#include "support.hpp"

using namespace selrank;
using testsupport::corpus_from_docs;
using testsupport::make_query;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("tfidf selector follows the term-weight formula") {
  // four documents so N = 4; "rare" appears in exactly one
  Corpus c = corpus_from_docs({
      {"d0", "rare rare here. common words. nothing shared here."},
      {"d1", "common filler."},
      {"d2", "common filler."},
      {"d3", "common filler."},
  });
  const Document& doc = c.document("d0");

  SUBCASE("sentence sharing no query term scores zero") {
    Query q = make_query(c.vocab, "q", "absent");
    SentenceScores s = score_tfidf(q, doc, c.vocab);
    for (double w : s.logits) CHECK(w == 0.0);
  }
  SUBCASE("a term present in every document contributes ln(1) = 0") {
    Query q = make_query(c.vocab, "q", "common");
    SentenceScores s = score_tfidf(q, doc, c.vocab);
    CHECK(s.logits[1] == doctest::Approx(0.0));
  }
  SUBCASE("tf = 2, N = 4, df = 1 gives 2 ln 4") {
    Query q = make_query(c.vocab, "q", "rare");
    SentenceScores s = score_tfidf(q, doc, c.vocab);
    CHECK(s.logits[0] == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("bm25 selector scores sentences against the document collection") {
  Corpus c = corpus_from_docs({{"d0",
                                "alpha beta gamma delta. beta gamma delta eps. "
                                "yoga beta gamma delta. gamma delta eps zeta. "
                                "delta eps zeta eta."}});
  const Document& doc = c.document("d0");
  REQUIRE(doc.sentences.size() == 5);

  SUBCASE("query term only in one sentence dominates") {
    Query q = make_query(c.vocab, "q", "yoga");
    SentenceScores s = score_bm25(q, doc);
    int best = 0;
    for (size_t i = 1; i < s.logits.size(); ++i)
      if (s.logits[i] > s.logits[static_cast<size_t>(best)])
        best = static_cast<int>(i);
    CHECK(best == 2);
  }
  SUBCASE("no overlap gives all zeros") {
    Query q = make_query(c.vocab, "q", "unrelated");
    SentenceScores s = score_bm25(q, doc);
    for (double w : s.logits) CHECK(w == 0.0);
  }
  SUBCASE("agrees with a definitional reference") {
    Query q = make_query(c.vocab, "q", "beta delta");
    SentenceScores s = score_bm25(q, doc);
    // reference: direct Okapi evaluation with sentence-level statistics
    const double n = 5.0;
    double avg = 0.0;
    for (const auto& sent : doc.sentences)
      avg += static_cast<double>(sent.tokens.size()) / n;
    for (size_t i = 0; i < doc.sentences.size(); ++i) {
      double expected = 0.0;
      for (TokenId t : q.tokens) {
        double tf = 0.0;
        for (TokenId id : doc.sentences[i].tokens)
          if (id == t) tf += 1.0;
        if (tf == 0.0) continue;
        double df = 0.0;
        for (const auto& sent : doc.sentences) {
          for (TokenId id : sent.tokens)
            if (id == t) {
              df += 1.0;
              break;
            }
        }
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double len = static_cast<double>(doc.sentences[i].tokens.size());
        expected += idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * len / avg));
      }
      CHECK(s.logits[i] == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("semantic selector is cosine of averaged vectors") {
  Corpus c = corpus_from_docs({{"d0", "north pole. east wind. zzz."}});
  EmbeddingTable table;
  table.dimension = 2;
  table.vectors = Mat::Zero(c.vocab.size(), 2);
  table.vectors.row(c.vocab.id("north")) << 0.0, 1.0;
  table.vectors.row(c.vocab.id("pole")) << 0.0, 2.0;
  table.vectors.row(c.vocab.id("east")) << 1.0, 0.0;
  table.vectors.row(c.vocab.id("wind")) << 3.0, 0.0;
  // "zzz" stays a zero vector

  const Document& doc = c.document("d0");
  Query q = make_query(c.vocab, "q", "north pole");
  SentenceScores s = score_semantic(q, doc, table);
  CHECK(s.logits[0] == doctest::Approx(1.0));  // identical direction
  CHECK(s.logits[1] == doctest::Approx(0.0));  // orthogonal averages
  CHECK(s.logits[2] == 0.0);                   // all tokens out of vocabulary
}

TEST_CASE("random selector is reproducible and uniform") {
  Corpus c = corpus_from_docs({{"d0", "a one. b two. c three. d four."}});
  const Document& doc = c.document("d0");

  SeededRng r1(5), r2(5);
  CHECK(score_random(doc, r1).logits == score_random(doc, r2).logits);

  SeededRng rng(99);
  std::vector<int> top1(4, 0);
  for (int i = 0; i < 10000; ++i) {
    Summary s = hard_select(score_random(doc, rng), doc, 1);
    top1[static_cast<size_t>(s.indices[0])]++;
  }
  for (int count : top1)
    CHECK(std::abs(count / 10000.0 - 0.25) < 0.02);
}

TEST_CASE("normalize") {
  SUBCASE("symmetry") {
    SentenceScores s = normalize({{0.0, 0.0}, std::nullopt});
    CHECK((*s.probs)[0] == doctest::Approx(0.5));
    CHECK((*s.probs)[1] == doctest::Approx(0.5));
  }
  SUBCASE("large logits do not overflow") {
    SentenceScores s = normalize({{1000.0, 0.0}, std::nullopt});
    CHECK((*s.probs)[0] == doctest::Approx(1.0));
    CHECK((*s.probs)[1] == doctest::Approx(0.0));
  }
  SUBCASE("hand-computed distribution") {
    SentenceScores s =
        normalize({{std::log(1.0), std::log(2.0), std::log(3.0)}, std::nullopt});
    CHECK((*s.probs)[0] == doctest::Approx(1.0 / 6));
    CHECK((*s.probs)[1] == doctest::Approx(2.0 / 6));
    CHECK((*s.probs)[2] == doctest::Approx(3.0 / 6));
  }
  SUBCASE("-inf keeps zero mass; all -inf rejected") {
    SentenceScores s = normalize({{0.0, -kInf}, std::nullopt});
    CHECK((*s.probs)[1] == 0.0);
    CHECK_THROWS_AS(normalize({{-kInf, -kInf}, std::nullopt}),
                    std::invalid_argument);
  }
}

TEST_CASE("hard_select") {
  Corpus c = corpus_from_docs(
      {{"d0", "s zero. s one. s two. s three. s four. s five."}});
  const Document& doc = c.document("d0");

  SUBCASE("k >= n takes everything") {
    Summary s = hard_select({{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, std::nullopt}, doc, 99);
    CHECK(s.indices == std::vector<int>{0, 1, 2, 3, 4, 5});
  }
  SUBCASE("ties break toward the lower index") {
    Corpus c3 = corpus_from_docs({{"d", "a a. b b. c c."}});
    Summary s = hard_select({{0.5, 0.9, 0.5}, std::nullopt}, c3.document("d"), 2);
    CHECK(s.indices == std::vector<int>{0, 1});
  }
  SUBCASE("head limit excludes later sentences") {
    Summary s =
        hard_select({{0.0, 0.1, 0.0, 0.0, 0.0, 9.9}, std::nullopt}, doc, 1, 2);
    CHECK(s.indices == std::vector<int>{1});
  }
  SUBCASE("-inf sentinels are never selected") {
    Summary s = hard_select({{-kInf, 0.1, -kInf, 0.0, -kInf, -kInf}, std::nullopt},
                            doc, 4);
    CHECK(s.indices == std::vector<int>{1, 3});
  }
  SUBCASE("token sequence keeps document order") {
    Summary s = hard_select({{0.9, 0.0, 0.8, 0.0, 0.0, 0.7}, std::nullopt}, doc, 3);
    CHECK(s.indices == std::vector<int>{0, 2, 5});
    std::vector<TokenId> expected;
    for (int i : {0, 2, 5})
      for (TokenId t : doc.sentences[static_cast<size_t>(i)].tokens)
        expected.push_back(t);
    CHECK(s.token_ids == expected);
  }
  SUBCASE("k below one is rejected") {
    CHECK_THROWS_AS(hard_select({{0.1}, std::nullopt}, corpus_from_docs({{"d", "x."}}).document("d"), 0),
                    std::invalid_argument);
  }
}

TEST_CASE("softmax monotonicity: selecting by p equals selecting by w") {
  Corpus c = corpus_from_docs({{"d0", "a b. c d. e f. g h."}});
  const Document& doc = c.document("d0");
  SentenceScores raw{{0.3, -1.2, 2.0, 0.4}, std::nullopt};
  SentenceScores normalized = normalize(raw);
  SentenceScores by_p{*normalized.probs, std::nullopt};
  CHECK(hard_select(raw, doc, 2).indices == hard_select(by_p, doc, 2).indices);
}

TEST_CASE("linear selector") {
  Corpus c = corpus_from_docs({{"d0", "apple pear. apple pear. plum plum plum."},
                               {"d1", "other words entirely."}});
  const Document& doc = c.document("d0");
  Query q = make_query(c.vocab, "q", "apple pear");

  SelectorConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden = 4;

  SUBCASE("identity layer reduces the score to a squared norm") {
    ParameterStore store;
    SeededRng init(3);
    store.create("embedding", c.vocab.size(), 4, 2, Init::kXavier, init);
    LinearSelector selector(store, cfg, init);
    store.get("selector.affine.w").mutable_value() = Mat::Identity(4, 4);
    store.get("selector.affine.b").mutable_value().setZero();

    DifferentiableScores s = selector.score(q, doc);
    // sentences 0 and 1 average exactly the query tokens
    Mat e = store.get("embedding").value();
    Eigen::RowVectorXd avg =
        (e.row(c.vocab.id("apple")) + e.row(c.vocab.id("pear"))) / 2.0;
    CHECK(s.scores.logits[0] == doctest::Approx(avg.squaredNorm()).epsilon(1e-12));
    CHECK(s.scores.logits[0] == doctest::Approx(s.scores.logits[1]));
  }

  SUBCASE("empty sentences are excluded with -inf") {
    Corpus c2 = corpus_from_docs({{"d", "real words. ???. more text."}});
    ParameterStore store;
    SeededRng init(4);
    store.create("embedding", c2.vocab.size(), 4, 2, Init::kXavier, init);
    LinearSelector selector(store, cfg, init);
    Query q2 = make_query(c2.vocab, "q", "real");
    DifferentiableScores s = selector.score(q2, c2.document("d"));
    REQUIRE(s.scores.logits.size() == 3);
    CHECK(s.scores.logits[1] == -kInf);
  }

  SUBCASE("gradients through normalize check out") {
    ParameterStore store;
    SeededRng init(7);
    store.create("embedding", c.vocab.size(), 4, 2, Init::kXavier, init);
    LinearSelector selector(store, cfg, init);
    Tensor costs = Tensor::row({1.0, -0.5, 0.25});
    auto build = [&] {
      return dot(softmax(selector.score(q, doc).logits), costs);
    };
    SeededRng pick(11);
    auto res = gradient_check(build, store, 1e-5, pick, 16);
    CHECK(res.ok);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("attentive selector") {
  Corpus c = corpus_from_docs({{"d0", "apple pear. apple pear. plum plum plum."}});
  const Document& doc = c.document("d0");
  Query q = make_query(c.vocab, "q", "apple pear");

  SelectorConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden = 3;
  cfg.att_dim = 2;

  ParameterStore store;
  SeededRng init(15);
  store.create("embedding", c.vocab.size(), 4, 2, Init::kXavier, init);
  AttentiveSelector selector(store, cfg, init);

  SUBCASE("scores are cosines, inside [-1, 1]") {
    DifferentiableScores s = selector.score(q, doc);
    for (double w : s.scores.logits) {
      CHECK(w <= 1.0 + 1e-12);
      CHECK(w >= -1.0 - 1e-12);
    }
  }
  SUBCASE("duplicated sentences score identically") {
    DifferentiableScores s = selector.score(q, doc);
    CHECK(s.scores.logits[0] == doctest::Approx(s.scores.logits[1]).epsilon(1e-12));
  }
  SUBCASE("gradient check through the attention path") {
    Tensor costs = Tensor::row({0.7, -0.2, 0.5});
    auto build = [&] {
      return dot(softmax(selector.score(q, doc).logits), costs);
    };
    SeededRng pick(21);
    auto res = gradient_check(build, store, 1e-5, pick, 6);
    CHECK(res.ok);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("every selector is duplication-consistent") {
  Corpus c = corpus_from_docs(
      {{"d0", "apple pear tart. apple pear tart. unrelated filler words."}});
  const Document& doc = c.document("d0");
  Query q = make_query(c.vocab, "q", "apple tart");

  auto check_dup = [](const SentenceScores& s) {
    REQUIRE(s.logits.size() == 3);
    CHECK(s.logits[0] == doctest::Approx(s.logits[1]).epsilon(1e-12));
  };
  check_dup(score_tfidf(q, doc, c.vocab));
  check_dup(score_bm25(q, doc));

  EmbeddingTable table;
  table.dimension = 2;
  table.vectors = Mat::Random(c.vocab.size(), 2);
  check_dup(score_semantic(q, doc, table));

  ParameterStore store;
  SeededRng init(1);
  store.create("embedding", c.vocab.size(), 4, 2, Init::kXavier, init);
  SelectorConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden = 3;
  cfg.att_dim = 2;
  LinearSelector linear(store, cfg, init);
  check_dup(linear.score(q, doc).scores);
  AttentiveSelector attentive(store, cfg, init);
  check_dup(attentive.score(q, doc).scores);
}
