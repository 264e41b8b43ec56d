#include "doctest.h"

#include "kpat/error.hpp"
#include "kpat/pattern.hpp"
#include "support.hpp"

using namespace kpat;

TEST_CASE("pattern space has 56 center-containing patterns in canonical order") {
  const auto& all = all_patterns();
  const auto ref = oracle::patterns();
  REQUIRE(all.size() == 56);
  REQUIRE(ref.size() == 56);
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].mask() == oracle::mask_of(ref[i]));
    CHECK((all[i].mask() & (1u << kCenterCell)) != 0);
  }
}

TEST_CASE("from_positions rejects bad input") {
  CHECK_THROWS_AS(fixture::pat({{0, 0}, {1, 1}, {2, 2}}), ParameterError);
  CHECK_THROWS_AS(fixture::pat({{0, 0}, {1, 1}, {2, 2}, {3, 0}}), ParameterError);
  CHECK_THROWS_AS(fixture::pat({{0, 0}, {0, 1}, {0, 2}, {2, 2}}), ParameterError);  // no center
  CHECK_THROWS_AS(fixture::pat({{0, 0}, {0, 0}, {1, 1}, {2, 2}}), ParameterError);
}

TEST_CASE("natural pattern keeps center plus the three largest") {
  const float k[9] = {0.1f, -5.0f, 0.2f, 3.0f, 0.0f, 0.3f, 0.4f, 0.5f, -4.0f};
  const Pattern p = natural_pattern(std::span<const float>(k, 9));
  CHECK(p == fixture::pat({{0, 1}, {1, 0}, {1, 1}, {2, 2}}));

  SUBCASE("ties go to the smaller position") {
    const float flat[9] = {1, 1, 1, 1, 1, 1, 1, 1, 1};
    CHECK(natural_pattern(std::span<const float>(flat, 9)) == fixture::pat({{0, 0}, {0, 1}, {0, 2}, {1, 1}}));
  }
}

TEST_CASE("pattern set ranks natural patterns by frequency") {
  LayerShape s;
  s.in_channels = 5;
  s.out_channels = 1;
  s.input_h = s.input_w = 3;
  WeightTensor w(s);
  auto put = [&](std::size_t ic, std::initializer_list<int> cells) {
    auto k = w.kernel(0, ic);
    for (int c : cells) k[c] = 1.0f;
  };
  put(0, {2, 5, 8});  // right column, three times
  put(1, {2, 5, 8});
  put(2, {2, 5, 8});
  put(3, {0, 1, 2});  // top row, once
  put(4, {6, 7, 8});  // bottom row, once
  const PatternSet set = build_pattern_set(std::span<const WeightTensor>(&w, 1), 3);
  REQUIRE(set.size() == 3);
  CHECK(set.by_id(1) == fixture::pat({{0, 2}, {1, 1}, {1, 2}, {2, 2}}));
  // equal counts: canonical order decides
  CHECK(set.by_id(2) == fixture::pat({{0, 0}, {0, 1}, {0, 2}, {1, 1}}));
  CHECK(set.by_id(3) == fixture::pat({{1, 1}, {2, 0}, {2, 1}, {2, 2}}));
  CHECK_THROWS_AS(build_pattern_set(std::span<const WeightTensor>(&w, 1), 0), ParameterError);
  CHECK_THROWS_AS(build_pattern_set(std::span<const WeightTensor>(&w, 1), 57), ParameterError);
}

TEST_CASE("pattern set validation and JSON") {
  CHECK_THROWS_AS(PatternSet(std::vector<Pattern>{}), ParameterError);
  const auto p = fixture::pat({{0, 1}, {1, 0}, {1, 1}, {1, 2}});
  CHECK_THROWS_AS(PatternSet({p, p}), ParameterError);

  std::mt19937_64 rng(3);
  const PatternSet set = fixture::random_set(rng, 8);
  const PatternSet back = PatternSet::from_json(set.to_json());
  CHECK(back == set);
  CHECK(set.to_json().find(' ') == std::string::npos);
  CHECK_THROWS_AS(PatternSet::from_json("[[[0,0],[1,1]]]"), FormatError);
  CHECK_THROWS_AS(PatternSet::from_json("{"), FormatError);
  CHECK_THROWS_AS(set.by_id(0), ParameterError);
  CHECK_THROWS_AS(set.by_id(9), ParameterError);
}

TEST_CASE("pattern projection matches brute force") {
  std::mt19937_64 rng(11);
  const PatternSet set = fixture::random_set(rng, 8);
  std::vector<std::uint16_t> masks;
  for (const auto& p : set.patterns()) masks.push_back(p.mask());
  for (int t = 0; t < 2000; ++t) {
    float k[9], out[9];
    for (auto& v : k) v = fixture::uniform(rng);
    const std::size_t id = project_pattern<float>(std::span<const float>(k, 9), set, std::span<float>(out, 9));
    REQUIRE(id == oracle::best_pattern(k, masks));
    for (int c = 0; c < 9; ++c) CHECK(out[c] == ((masks[id - 1] >> c) & 1 ? k[c] : 0.0f));
  }
  SUBCASE("ties go to the lowest id") {
    float k[9] = {1, 1, 1, 1, 1, 1, 1, 1, 1}, out[9];
    CHECK(project_pattern<float>(std::span<const float>(k, 9), set, std::span<float>(out, 9)) == 1);
  }
  SUBCASE("projection is idempotent") {
    float k[9], once[9], twice[9];
    for (auto& v : k) v = fixture::uniform(rng);
    const auto a = project_pattern<float>(std::span<const float>(k, 9), set, std::span<float>(once, 9));
    const auto b = project_pattern<float>(std::span<const float>(once, 9), set, std::span<float>(twice, 9));
    CHECK(a == b);
    for (int c = 0; c < 9; ++c) CHECK(once[c] == twice[c]);
  }
}

TEST_CASE("connectivity projection keeps the alpha largest kernels") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    LayerShape s = fixture::random_shape(rng);
    WeightTensor w(s);
    for (auto& v : w.data) v = fixture::uniform(rng);
    // duplicate a kernel to force ties
    if (s.kernel_count() > 1) std::copy_n(w.kernel(0, 0).begin(), 9, w.data.end() - 9);
    std::vector<double> norms;
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        double e = 0;
        for (float v : w.kernel(o, i)) e += double(v) * v;
        norms.push_back(e);
      }
    const std::size_t alpha = 1 + rng() % s.kernel_count();
    const auto mask = project_connectivity(w, alpha);
    CHECK(mask.kept == oracle::top_alpha(norms, alpha));
    CHECK(mask.kept_count() == alpha);
  }
  LayerShape s;
  s.in_channels = 2;
  s.out_channels = 2;
  s.input_h = s.input_w = 3;
  WeightTensor w(s);
  CHECK_THROWS_AS(project_connectivity(w, 0), ParameterError);
  CHECK_THROWS_AS(project_connectivity(w, 5), ParameterError);
}

TEST_CASE("alpha from pruning rate") {
  CHECK(alpha_for_rate(100, 3.6) == 28);
  CHECK(alpha_for_rate(36, 3.6) == 10);
  CHECK(alpha_for_rate(4, 1.0) == 4);
  CHECK(alpha_for_rate(3, 100.0) == 1);
  CHECK_THROWS_AS(alpha_for_rate(10, 0.5), ParameterError);
}
