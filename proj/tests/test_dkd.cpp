#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "clinsum/dkd.hpp"
#include "clinsum/synthetic.hpp"

using namespace clinsum;

namespace {

TripleStore fixture_store() {
  std::vector<KnowledgeTriple> triples;
  for (int i = 0; i < 6; ++i) {
    triples.push_back({"fever", "rel" + std::to_string(i), "tail" + std::to_string(i), 1.0 - 0.1 * i});
    triples.push_back({"rash", "rel" + std::to_string(i), "tail" + std::to_string(i), 1.0 - 0.1 * i});
  }
  triples.push_back({"Fever", "alt_cased", "entry", 0.05});
  return TripleStore(std::move(triples));
}

}  // namespace

TEST_SUITE("dkd") {

TEST_CASE("extract_keywords basics") {
  CHECK(extract_keywords({}, 7).empty());
  CHECK(extract_keywords({"rash rash rash"}, 7) == std::vector<std::string>{"rash"});
  CHECK(extract_keywords({"the and of to"}, 7).empty());
  CHECK(extract_keywords({"..."}, 7).empty());

  auto many = extract_keywords({"fever cough fever rash cough fever pain ache chills nausea"}, 7);
  CHECK(many.size() == 7);
  CHECK(many[0] == "fever");  // tf 3, earliest position
}

TEST_CASE("extract_keywords scoring favors frequency then earliness") {
  // both tf=2; "alpha" occurs first so gets the larger position bonus
  auto kws = extract_keywords({"alpha beta alpha beta"}, 2);
  CHECK(kws == std::vector<std::string>{"alpha", "beta"});

  // lexicographic tie break at equal tf and equal first position is
  // impossible; equal score happens for same tf/first combination only
  auto capped = extract_keywords({"zeta zeta yak yak xray"}, 2);
  CHECK(capped.size() == 2);
  CHECK(capped[0] == "zeta");
}

TEST_CASE("retrieve_concepts bounds, order, dedup") {
  TripleStore store = fixture_store();
  auto empty = retrieve_concepts({}, store, 5);
  CHECK(empty.triples.empty());

  auto missing = retrieve_concepts({"unknown"}, store, 5);
  CHECK(missing.triples.empty());

  auto ctx = retrieve_concepts({"fever", "rash"}, store, 5);
  CHECK(ctx.triples.size() == 10);
  // canonical order: weight descending
  CHECK(ctx.triples[0].relation == "rel0");
  CHECK(ctx.triples[4].relation == "rel4");

  std::set<std::array<std::string, 3>> unique;
  for (const auto& t : ctx.triples) CHECK(unique.insert({t.head, t.relation, t.tail}).second);

  // case-insensitive head lookup
  auto cased = retrieve_concepts({"FEVER"}, store, 2);
  CHECK(cased.triples.size() == 2);
}

TEST_CASE("distill respects the n_k * n_r bound") {
  SyntheticBundle bundle = generate_synthetic({.n_dialogues = 12, .n_departments = 4});
  DkdConfig config;  // defaults 7, 5
  for (const Dialogue& d : bundle.corpus) {
    std::vector<std::string> context;
    for (const Utterance& u : d.utterances) context.push_back(u.text);
    auto ctx = distill(context, bundle.store, config);
    CHECK(ctx.keywords.size() <= 7);
    CHECK(ctx.triples.size() <= 35);
    auto again = distill(context, bundle.store, config);
    CHECK(again.keywords == ctx.keywords);
    CHECK(again.triples == ctx.triples);
  }
}

TEST_CASE("seven keywords with five-plus stored triples each yields exactly 35") {
  std::vector<KnowledgeTriple> triples;
  std::vector<std::string> keywords;
  for (int k = 0; k < 7; ++k) {
    std::string head = "kw" + std::to_string(k);
    keywords.push_back(head);
    for (int j = 0; j < 6; ++j) {
      triples.push_back({head, "r" + std::to_string(j), "t" + std::to_string(j), 1.0 - 0.05 * j});
    }
  }
  auto ctx = retrieve_concepts(keywords, TripleStore(std::move(triples)), 5);
  CHECK(ctx.triples.size() == 35);
}

TEST_CASE("linearize_triples token accounting") {
  CHECK(linearize_triples({}).empty());

  DistilledContext one;
  one.triples.push_back({"fever", "symptom_of", "infection", 1.0});
  CHECK(linearize_triples(one) == std::vector<std::string>{"fever", "symptom_of", "infection"});

  DistilledContext multi;
  multi.triples.push_back({"fever", "related_to", "high temperature", 1.0});
  multi.triples.push_back({"rash", "is_a", "symptom", 0.9});
  auto tokens = linearize_triples(multi);
  CHECK(tokens.size() == 4 + 3);  // multiword tail splits into two tokens
}

TEST_CASE("triple store file round trip and rejects malformed lines") {
  auto path = std::filesystem::temp_directory_path() / "clinsum_test_triples.tsv";
  TripleStore store = fixture_store();
  store.save(path);
  TripleStore loaded = TripleStore::load(path);
  CHECK(loaded.triple_count() == store.triple_count());
  CHECK(loaded.lookup("fever").size() == store.lookup("fever").size());
  CHECK(loaded.lookup("fever")[0] == store.lookup("fever")[0]);

  std::ofstream(path) << "fever\tonly_three_fields\t1.0\n";
  CHECK_THROWS_WITH_AS(TripleStore::load(path), doctest::Contains("4 tab-separated"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("knowledge embedder pooling") {
  TripleStore store = fixture_store();
  KnowledgeEmbedder embedder(store, 8, 3);

  Tensor empty = embedder.encode({});
  CHECK(empty.cols() == 8);
  for (size_t i = 0; i < empty.size(); ++i) CHECK(empty[i] == 0.0);

  Tensor single = embedder.encode({"fever"});
  Tensor pair = embedder.encode({"fever", "rash"});
  Tensor rash = embedder.encode({"rash"});
  for (int j = 0; j < 8; ++j) {
    CHECK(pair.at(0, j) == doctest::Approx((single.at(0, j) + rash.at(0, j)) / 2.0).epsilon(1e-12));
  }

  // out-of-vocabulary tokens share the unk row
  CHECK(embedder.encode({"zzz_unknown"}) == embedder.encode({"qqq_unknown"}));
}

TEST_CASE("stopword list filters and is sized as shipped") {
  CHECK(is_stopword("the"));
  CHECK(is_stopword("because"));
  CHECK_FALSE(is_stopword("fever"));
}

}  // TEST_SUITE
