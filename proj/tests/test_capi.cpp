#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "kpat/kpat.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  kpat_string_free(s);
  return out;
}

const char* kSparse = R"({"shape":{"kernel_h":3,"kernel_w":3,"in_channels":2,"out_channels":2,"stride":1,"input_h":5,"input_w":5},
"pattern_set":[[[0,1],[1,0],[1,1],[1,2]]],
"filters":[{"bias":0.5,"kernels":[{"in_channel":0,"pattern_id":1,"weights":[1,2,3,4]}]},
           {"bias":-1,"kernels":[{"in_channel":0,"pattern_id":1,"weights":[1,1,1,1]},{"in_channel":1,"pattern_id":1,"weights":[0.5,0.5,0.5,0.5]}]}],
"plan":{"filter_permutation":[0,1],"groups":[[0,1,1],[1,2,2]]}})";

}  // namespace

TEST_CASE("status codes and last error") {
  kpat_pattern_set* set = nullptr;
  CHECK(kpat_pattern_set_from_json("[[[0,0]]]", &set) == KPAT_ERR_VALIDATION);
  CHECK(set == nullptr);
  CHECK(std::strlen(kpat_last_error()) > 0);
  CHECK(kpat_fkw_load("/nonexistent/x.fkw", nullptr) != KPAT_OK);
  kpat_fkw* m = nullptr;
  CHECK(kpat_fkw_load("/nonexistent/x.fkw", &m) == KPAT_ERR_IO);
  CHECK(std::string(kpat_last_error()).find("x.fkw") != std::string::npos);
  CHECK(kpat_version()[0] != '\0');
}

TEST_CASE("pattern set handle") {
  kpat_pattern_set* all = nullptr;
  REQUIRE(kpat_pattern_set_all(&all) == KPAT_OK);
  CHECK(kpat_pattern_set_size(all) == 56);
  char* json = nullptr;
  REQUIRE(kpat_pattern_set_to_json(all, &json) == KPAT_OK);
  const std::string text = take(json);
  kpat_pattern_set* back = nullptr;
  REQUIRE(kpat_pattern_set_from_json(text.c_str(), &back) == KPAT_OK);
  CHECK(kpat_pattern_set_size(back) == 56);
  kpat_pattern_set_free(back);
  kpat_pattern_set_free(all);
}

TEST_CASE("fkw run through the C interface") {
  kpat_fkw* m = nullptr;
  REQUIRE(kpat_fkw_from_sparse_json(kSparse, &m) == KPAT_OK);
  CHECK(kpat_fkw_kernel_count(m) == 3);
  size_t fb = 0, cb = 0;
  REQUIRE(kpat_fkw_structure_bytes(m, &fb, &cb) == KPAT_OK);
  CHECK(fb == 4 * (3 + 2 + 3 + 2 * 2));
  CHECK(cb == 4 * (3 + 12));

  kpat_feature* in = nullptr;
  REQUIRE(kpat_feature_random(2, 5, 5, 7, &in) == KPAT_OK);
  kpat_feature *out = nullptr, *ref = nullptr;
  char* stats = nullptr;
  REQUIRE(kpat_run(m, in, nullptr, 2, 0, &out, &stats) == KPAT_OK);
  CHECK(take(stats).find("input_element_loads") != std::string::npos);
  REQUIRE(kpat_run_dense(m, in, 0, &ref) == KPAT_OK);
  double err = 1;
  REQUIRE(kpat_feature_max_rel_error(out, ref, &err) == KPAT_OK);
  CHECK(err < 1e-5);
  size_t c = 0, h = 0, w = 0;
  kpat_feature_dims(out, &c, &h, &w);
  CHECK(c == 2);
  CHECK(h == 3);
  CHECK(w == 3);

  kpat_feature* bad = nullptr;
  REQUIRE(kpat_feature_random(3, 5, 5, 7, &bad) == KPAT_OK);
  kpat_feature* none = nullptr;
  CHECK(kpat_run(m, bad, nullptr, 1, 0, &none, nullptr) == KPAT_ERR_VALIDATION);
  CHECK(kpat_run(m, in, "{\"tile\":{\"h\":0}}", 1, 0, &none, nullptr) == KPAT_ERR_VALIDATION);

  const auto dir = std::filesystem::temp_directory_path() / "kpat_capi_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.fkw").string();
  REQUIRE(kpat_fkw_save(m, path.c_str()) == KPAT_OK);
  kpat_fkw* again = nullptr;
  REQUIRE(kpat_fkw_load(path.c_str(), &again) == KPAT_OK);
  char *j1 = nullptr, *j2 = nullptr;
  REQUIRE(kpat_fkw_to_json(m, &j1) == KPAT_OK);
  REQUIRE(kpat_fkw_to_json(again, &j2) == KPAT_OK);
  CHECK(take(j1) == take(j2));

  kpat_pattern_set* set = nullptr;
  REQUIRE(kpat_pattern_set_from_json("[[[0,1],[1,0],[1,1],[1,2]]]", &set) == KPAT_OK);
  kpat_manifest* man = nullptr;
  REQUIRE(kpat_manifest_new(set, &man) == KPAT_OK);
  REQUIRE(kpat_manifest_add_layer(man, "conv0", "m.fkw", m, nullptr, 0) == KPAT_OK);
  char* text = nullptr;
  REQUIRE(kpat_manifest_emit(man, &text) == KPAT_OK);
  const std::string emitted = take(text);
  kpat_manifest* parsed = nullptr;
  char* viol = nullptr;
  REQUIRE(kpat_manifest_parse(emitted.c_str(), &parsed, &viol) == KPAT_OK);
  kpat_string_free(viol);
  CHECK(kpat_manifest_layer_count(parsed) == 1);
  kpat_feature* mout = nullptr;
  REQUIRE(kpat_manifest_run(parsed, dir.string().c_str(), in, 1, &mout, nullptr) == KPAT_OK);
  REQUIRE(kpat_feature_max_rel_error(mout, ref, &err) == KPAT_OK);
  CHECK(err < 1e-5);

  kpat_manifest* broken = nullptr;
  CHECK(kpat_manifest_parse("{\"version\":1}", &broken, &viol) == KPAT_ERR_VALIDATION);
  CHECK(take(viol).find("/layers") != std::string::npos);

  kpat_feature_free(mout);
  kpat_manifest_free(parsed);
  kpat_manifest_free(man);
  kpat_pattern_set_free(set);
  kpat_fkw_free(again);
  std::filesystem::remove_all(dir);
  kpat_feature_free(bad);
  kpat_feature_free(ref);
  kpat_feature_free(out);
  kpat_feature_free(in);
  kpat_fkw_free(m);
}

TEST_CASE("null handles are rejected") {
  kpat_feature* out = nullptr;
  CHECK(kpat_run(nullptr, nullptr, nullptr, 1, 0, &out, nullptr) == KPAT_ERR_VALIDATION);
  kpat_fkw_free(nullptr);
  kpat_string_free(nullptr);
}
