#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "clinsum/visual.hpp"

using namespace clinsum;

namespace {

std::filesystem::path write_features(const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / "clinsum_test_visual.tsv";
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_SUITE("visual") {

TEST_CASE("load fidelity and width inference") {
  auto path = write_features(
      "a\t1,2,3,4,5,6,7,8\n"
      "b\t0,0,0,0,0,0,0,1\n"
      "c\t-1,0.5,0,0,0,0,0,0\n");
  auto store = VisualFeatureStore::load(path);
  CHECK(store.size() == 3);
  CHECK(store.width() == 8);
  CHECK(store.feature("a")[0] == 1.0);
  std::filesystem::remove(path);
}

TEST_CASE("width mismatch names the offending id") {
  auto path = write_features(
      "a\t1,2,3,4,5,6,7,8\n"
      "bad\t1,2,3,4,5,6,7\n");
  CHECK_THROWS_WITH_AS(VisualFeatureStore::load(path), doctest::Contains("bad"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("empty file loads as an empty store") {
  auto path = write_features("");
  auto store = VisualFeatureStore::load(path);
  CHECK(store.size() == 0);
  CHECK(store.width() == 0);
  std::filesystem::remove(path);
}

TEST_CASE("pooling semantics") {
  VisualFeatureStore store(4);
  store.add("u", {1, 2, 3, 4});
  store.add("v", {3, 2, 1, 0});

  Tensor single = pool_dialogue_visuals({"u"}, store);
  CHECK(single == Tensor{{1, 2, 3, 4}});

  Tensor mean = pool_dialogue_visuals({"u", "v"}, store);
  CHECK(mean == Tensor{{2, 2, 2, 2}});

  Tensor empty = pool_dialogue_visuals({}, store);
  CHECK(empty == Tensor(1, 4));

  CHECK_THROWS_WITH_AS(pool_dialogue_visuals({"ghost"}, store), doctest::Contains("ghost"), DataError);
}

TEST_CASE("pooling is permutation invariant and idempotent on copies") {
  VisualFeatureStore store(3);
  store.add("u", {1, 2, 3});
  store.add("v", {4, 5, 6});
  store.add("w", {-1, 0, 1});

  Tensor a = pool_dialogue_visuals({"u", "v", "w"}, store);
  Tensor b = pool_dialogue_visuals({"w", "u", "v"}, store);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  Tensor copies = pool_dialogue_visuals({"v", "v", "v"}, store);
  CHECK(copies == Tensor{{4, 5, 6}});
}

TEST_CASE("save/load round trip") {
  VisualFeatureStore store(2);
  store.add("x", {0.125, -3.5});
  store.add("y", {1e-9, 2.25});
  auto path = std::filesystem::temp_directory_path() / "clinsum_test_visual_rt.tsv";
  store.save(path);
  auto loaded = VisualFeatureStore::load(path);
  CHECK(loaded.width() == 2);
  CHECK(loaded.feature("x") == store.feature("x"));
  CHECK(loaded.feature("y") == store.feature("y"));
  std::filesystem::remove(path);
}

}  // TEST_SUITE
