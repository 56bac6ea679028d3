// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tds/ngram.hpp"
#include "tds/rng.hpp"

using namespace tds;

namespace {

const double kLn10 = std::numbers::ln10;

ArpaModel toy(ArpaOptions options = {}) {
  return ArpaModel::load(std::string(TDS_DATA_DIR) + "/lm/toy.arpa", options);
}

const char* kUnigrams =
    "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.5\tx\n-0.25\ty\n-1.5\tz\n\n\\end\\\n";

}  // namespace

TEST_CASE("unigram lookup") {
  ArpaModel m = ArpaModel::parse_string(kUnigrams);
  CHECK(m.max_order() == 1);
  CHECK(m.score("x", {}) == -0.5 * kLn10);
  CHECK(m.score("y", {"x", "z"}) == -0.25 * kLn10);
  CHECK(m.score("z", {}) == -1.5 * kLn10);
  CHECK(m.score("w", {}) == doctest::Approx(std::log(1e-10)));
  CHECK(m.score_sequence(std::vector<std::string>{}) == 0.0);
}

TEST_CASE("backoff chain on the fixture") {
  ArpaModel m = toy();
  CHECK(m.max_order() == 2);
  CHECK(m.count(1) == 5);
  CHECK(m.count(2) == 5);
  // listed bigram
  CHECK(m.score("b", {"a"}) == -0.3010299956639812 * kLn10);
  // b a is absent: backoff(b) + P(a)
  CHECK(m.score("a", {"b"}) == (-0.30103 + -0.6989700043360187) * kLn10);
  // history without a backoff entry contributes nothing
  CHECK(m.score("b", {"</s>"}) == -0.5228787452803376 * kLn10);
  // only the last word matters for a bigram model
  CHECK(m.score("b", {"b", "b", "a"}) == m.score("b", {"a"}));
  // unknown word takes the <unk> unigram
  CHECK(m.score("zebra", {"a"}) == -1.0 * kLn10);
  // a single token scores as its unigram
  CHECK(m.score_sequence(std::vector<std::string>{"b"}) == -0.5228787452803376 * kLn10);
}

TEST_CASE("a fully covered context sums to one") {
  ArpaModel m = toy();
  double z = 0;
  for (const auto& w : m.words())
    if (w != ArpaModel::kBos) z += std::exp(m.score(w, {"a"}));
  CHECK(std::abs(z - 1.0) < 1e-6);
}

TEST_CASE("sentence start context and eos flag") {
  ArpaOptions with_bos;
  with_bos.sentence_start_context = true;
  ArpaModel m = toy(with_bos);
  CHECK(m.score_sequence(std::vector<std::string>{"a"}) == -0.1549019599857432 * kLn10);
  ArpaOptions no_eos;
  no_eos.score_eos = false;
  ArpaModel n = toy(no_eos);
  CHECK(n.score_sequence(std::vector<std::string>{"a", "</s>"}) ==
        n.score_sequence(std::vector<std::string>{"a"}));
  CHECK(toy().score_sequence(std::vector<std::string>{"a", "</s>"}) ==
        doctest::Approx((-0.6989700043360187 - 0.5228787452803376) * kLn10).epsilon(1e-14));
}

TEST_CASE("incremental scoring equals whole-sequence scoring") {
  ArpaModel m = toy();
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> ids;
    const std::size_t n = rng.uniform_int(8);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng.uniform_int(m.vocab_size() + 1)) - 1);
    LmContext ctx = m.start();
    double total = 0;
    for (int w : ids) {
      LmContext next;
      total += m.advance(ctx, w, next);
      ctx = next;
    }
    CHECK(total == m.score_sequence(ids));
  }
}

TEST_CASE("dump and reload keep every score") {
  ArpaModel m = toy();
  std::ostringstream out;
  m.dump(out);
  ArpaModel back = ArpaModel::parse_string(out.str());
  for (std::size_t n = 1; n <= m.max_order(); ++n) {
    CHECK(back.count(n) == m.count(n));
    for (const auto& key : m.ngrams(n)) {
      std::vector<std::string> words;
      for (int id : key) words.push_back(m.word(id));
      const std::string last = words.back();
      words.pop_back();
      CHECK(back.score(last, words) == m.score(last, words));
    }
  }
}

TEST_CASE("load errors carry line numbers") {
  const std::string short_count =
      "\\data\\\nngram 1=5\n\n\\1-grams:\n-1\ta\n-1\tb\n-1\tc\n-1\td\n\n\\end\\\n";
  CHECK_THROWS_WITH(ArpaModel::parse_string(short_count), doctest::Contains("declared 5"));
  CHECK_THROWS_WITH(ArpaModel::parse_string("\\data\\\nngram 1=1\n\n\\1-grams:\nbad\ta\n\\end\\\n"),
                    doctest::Contains("line 5"));
  CHECK_THROWS(ArpaModel::parse_string("ngram 1=1\n"));
  CHECK_THROWS(ArpaModel::parse_string("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n"));
  // bigram whose history is not a listed unigram
  CHECK_THROWS_WITH(
      ArpaModel::parse_string("\\data\\\nngram 1=1\nngram 2=1\n\n\\1-grams:\n-1\ta\n\n\\2-grams:\n"
                              "-1\tb a\n\n\\end\\\n"),
      doctest::Contains("line 9"));
  CHECK_THROWS(ArpaModel::load("/nonexistent.arpa"));
}

TEST_CASE("add-one estimate is normalized in every context") {
  std::vector<std::vector<std::string>> corpus{{"a", "b", "a"}, {"b", "b"}, {"a", "c", "b", "a"}};
  for (std::size_t order : {1u, 2u, 3u}) {
    ArpaModel m = ArpaModel::estimate_add_one(corpus, order);
    std::vector<std::vector<std::string>> contexts{{}, {"a"}, {"b"}, {"c"}, {"<s>"},
                                                   {"a", "b"}, {"b", "b"}, {"c", "a"}, {"<s>", "a"}};
    for (const auto& ctx : contexts) {
      double z = 0;
      for (const auto& w : m.words())
        if (w != ArpaModel::kBos) z += std::exp(m.score(w, ctx));
      CHECK(std::abs(z - 1.0) < 1e-9);
    }
    std::ostringstream out;
    m.dump(out);
    ArpaModel back = ArpaModel::parse_string(out.str());
    CHECK(back.score("b", {"a"}) == m.score("b", {"a"}));
  }
}

TEST_CASE("token scorer maps decoder ids through strings") {
  ArpaModel m = toy();
  ArpaTokenScorer scorer(m, {"<unk>", "</s>", "a", "b", "q"});
  LmContext ctx = scorer.start(), next;
  CHECK(scorer.score(ctx, 2, next) == m.score("a", {}));
  CHECK(scorer.score(next, 3, ctx) == m.score("b", {"a"}));
  CHECK(scorer.score(ctx, 4, next) == -kLn10);
  CHECK_THROWS_AS(scorer.score(ctx, 5, next), std::out_of_range);
}
