#include "doctest.h"

#include <algorithm>

#include "json.hpp"
#include "kpat/error.hpp"
#include "kpat/lr.hpp"
#include "support.hpp"

using namespace kpat;

namespace {

ModelManifest two_layers() {
  std::mt19937_64 rng(1);
  ModelManifest m;
  m.pattern_set = fixture::random_set(rng, 4);
  LayerRecord a;
  a.name = "conv0";
  a.fkw_file = "conv0.fkw";
  a.patterns = {1, 3};
  a.shape = LayerShape{3, 3, 3, 8, 1, 16, 16};
  a.config = ExecConfig{}.normalized(a.shape);
  LayerRecord b = a;
  b.name = "conv1";
  b.fkw_file = "conv1.fkw";
  b.patterns = {2};
  b.shape = LayerShape{3, 3, 8, 4, 2, 14, 14};
  b.config.order = LoopOrder::kCiCoHw;
  b.config.tile_h = 2;
  b.config = b.config.normalized(b.shape);
  b.relu = false;
  m.layers = {a, b};
  return m;
}

bool has_path(const std::vector<Violation>& v, const std::string& path) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.path == path; });
}

}  // namespace

TEST_CASE("manifest round trip is canonical") {
  const ModelManifest m = two_layers();
  CHECK(lr_validate(m).empty());
  const std::string text = lr_emit(m);
  CHECK(text.back() == '\n');
  CHECK(text.find(' ') == std::string::npos);
  const auto parsed = lr_parse(text);
  REQUIRE(parsed.ok());
  CHECK(*parsed.manifest == m);
  CHECK(lr_emit(*parsed.manifest) == text);
  // keys come out sorted whatever order they were written in
  auto j = nlohmann::ordered_json::parse(text);
  nlohmann::ordered_json rev;
  for (auto it = j.rbegin(); it != j.rend(); ++it) rev[it.key()] = it.value();
  CHECK(lr_emit(lr_parse_or_throw(rev.dump(2))) == text);
}

TEST_CASE("every violation is reported with its path") {
  auto j = nlohmann::json::parse(lr_emit(two_layers()));
  j["layers"][0]["patterns"][1] = 9;
  j["layers"][0]["tile"]["h"] = 99;
  j["layers"][1]["shape"]["in_channels"] = 5;
  j["layers"][1]["unroll"]["oc"] = 0;
  j["layers"][1].erase("name");
  j["extra"] = true;
  const auto r = lr_parse(j.dump());
  CHECK_FALSE(r.ok());
  CHECK(has_path(r.violations, "/layers/0/patterns/1"));
  CHECK(has_path(r.violations, "/layers/0/tile/h"));
  CHECK(has_path(r.violations, "/layers/1/unroll/oc"));
  CHECK(has_path(r.violations, "/layers/1/name"));
  CHECK(has_path(r.violations, "/extra"));
  CHECK(r.violations.size() >= 5);
  try {
    lr_parse_or_throw(j.dump());
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("/layers/0/tile/h") != std::string::npos);
    CHECK(std::string(e.what()).find("/extra") != std::string::npos);
  }
}

TEST_CASE("channel chaining is checked") {
  auto j = nlohmann::json::parse(lr_emit(two_layers()));
  j["layers"][1]["shape"]["in_channels"] = 5;
  j["layers"][1]["tile"]["ic"] = 5;
  const auto r = lr_parse(j.dump());
  CHECK(has_path(r.violations, "/layers/1/shape/in_channels"));
}

TEST_CASE("degenerate manifests") {
  ModelManifest m = two_layers();
  m.layers.clear();
  CHECK(has_path(lr_validate(m), "/layers"));
  m = two_layers();
  m.version = 2;
  CHECK(has_path(lr_validate(m), "/version"));
  CHECK_FALSE(lr_parse("{").ok());
  CHECK_FALSE(lr_parse("[]").ok());
  CHECK_THROWS_AS(lr_parse_or_throw("{}"), FormatError);
}
