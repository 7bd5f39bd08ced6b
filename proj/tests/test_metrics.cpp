#include <doctest.h>

#include <cmath>
#include <sstream>

#include "clinsum/metrics.hpp"

using namespace clinsum;

namespace {

TokenList toks(const std::string& s) {
  TokenList out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("bleu identity and zero overlap") {
  std::vector<TokenList> cand{toks("the cat sat on the mat")};
  auto scores = bleu(cand, cand);
  CHECK(scores.bleu == 1.0);
  CHECK(scores.b1 == 1.0);
  CHECK(scores.b4 == 1.0);

  auto zero = bleu({toks("dog barks loud here")}, {toks("cat sits quiet there")});
  CHECK(zero.bleu < 1e-8);
  CHECK(zero.b1 == 0.0);
}

TEST_CASE("bleu brevity penalty and floored higher orders") {
  auto scores = bleu({toks("the cat")}, {toks("the cat sat on the mat")});
  CHECK(scores.b1 == 1.0);
  CHECK(scores.b2 == 1.0);
  CHECK(scores.b3 == 0.0);
  CHECK(scores.b4 == 0.0);
  double bp = std::exp(1.0 - 6.0 / 2.0);
  double expected = bp * std::exp((std::log(1.0) + std::log(1.0) + std::log(1e-9) + std::log(1e-9)) / 4.0);
  CHECK(scores.bleu == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bleu clipping counts repeated candidate n-grams once per reference occurrence") {
  // "the the the" vs "the cat": one clipped unigram match out of three
  auto scores = bleu({toks("the the the")}, {toks("the cat")});
  CHECK(scores.b1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bleu rejects mismatched list lengths") {
  CHECK_THROWS_AS(bleu({toks("a")}, {}), DataError);
}

TEST_CASE("rouge_n hand-counted overlap") {
  auto identity = rouge_n(toks("a b c"), toks("a b c"), 1);
  CHECK(identity.f1 == 1.0);

  auto r = rouge_n(toks("a b c"), toks("a b d"), 1);
  CHECK(r.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK(rouge_n(toks("x y"), toks("a b"), 1).f1 == 0.0);
  CHECK(rouge_n({}, toks("a"), 1).f1 == 0.0);
}

TEST_CASE("rouge_l via hand DP") {
  CHECK(rouge_l(toks("a b c"), toks("a b c")).f1 == 1.0);

  auto r = rouge_l(toks("a c b"), toks("a b c"));
  CHECK(r.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK(rouge_l({}, toks("a b")).f1 == 0.0);
}

TEST_CASE("rouge_l recall/precision symmetry") {
  auto ab = rouge_l(toks("a c b d"), toks("a b c"));
  auto ba = rouge_l(toks("a b c"), toks("a c b d"));
  CHECK(ab.recall == ba.precision);
  CHECK(ab.precision == ba.recall);
}

TEST_CASE("meteor_lite hand values") {
  CHECK(meteor_lite(toks("the cat sat"), toks("the cat sat")) == doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-12));
  CHECK(meteor_lite(toks("x y"), toks("a b")) == 0.0);
  CHECK(meteor_lite({}, toks("a")) == 0.0);

  // identical sequences: P=R=1, chunks=1, score = 1 - 0.5/m^3
  auto sameish = toks("one two three four");
  CHECK(meteor_lite(sameish, sameish) == doctest::Approx(1.0 - 0.5 / 64.0).epsilon(1e-12));
}

TEST_CASE("meteor_lite fragmentation penalty grows with chunk count") {
  // same matches, different contiguity
  double contiguous = meteor_lite(toks("a b c d"), toks("a b c d"));
  double fragmented = meteor_lite(toks("a c b d"), toks("a b c d"));
  CHECK(fragmented < contiguous);
}

TEST_CASE("jaccard set arithmetic") {
  CHECK(jaccard(toks("a b c"), toks("c a b")) == 1.0);
  CHECK(jaccard(toks("a b c"), toks("a b d")) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(jaccard(toks("x"), toks("y")) == 0.0);
  CHECK(jaccard({}, {}) == 1.0);
}

TEST_CASE("bleu order-sensitive, jaccard order-invariant") {
  auto ref = toks("alpha beta gamma delta epsilon");
  auto shuffled = toks("epsilon delta gamma beta alpha");
  CHECK(jaccard(shuffled, ref) == 1.0);
  auto straight = bleu({ref}, {ref});
  auto moved = bleu({shuffled}, {ref});
  CHECK(moved.bleu < straight.bleu);
}

TEST_CASE("classification metrics on a 3-class confusion fixture") {
  // gold:      a a a b b c
  // predicted: a a b b c c
  std::vector<std::string> gold{"a", "a", "a", "b", "b", "c"};
  std::vector<std::string> pred{"a", "a", "b", "b", "c", "c"};
  auto scores = classification_metrics(pred, gold, {"a", "b", "c"});
  CHECK(scores.accuracy == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
  // per class: a: P=1, R=2/3, F1=0.8; b: P=0.5, R=0.5, F1=0.5; c: P=0.5, R=1, F1=2/3
  double expected = (0.8 + 0.5 + 2.0 / 3.0) / 3.0;
  CHECK(scores.macro_f1 == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("evaluate_corpus aggregates and renders") {
  std::vector<TokenList> cand{toks("the cat sat on the mat"), toks("a b c")};
  auto report = evaluate_corpus(cand, cand);
  CHECK(report.n_samples == 2);
  CHECK(report.bleu == 1.0);
  CHECK(report.rougeL == 1.0);
  CHECK(report.jaccard == 1.0);
  std::string table = render_report(report);
  CHECK(table.find("ROUGE-L") != std::string::npos);
  CHECK_THROWS_AS(evaluate_corpus({}, {}), DataError);
}

}  // TEST_SUITE
