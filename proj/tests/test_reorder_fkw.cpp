#include "doctest.h"

#include <filesystem>
#include <string>

#include "kpat/error.hpp"
#include "kpat/fkw.hpp"
#include "kpat/io.hpp"
#include "kpat/reorder.hpp"
#include "support.hpp"

using namespace kpat;

namespace {

SparseLayer random_layer(std::mt19937_64& rng, std::size_t k = 6) {
  const PatternSet set = fixture::random_set(rng, k);
  LayerShape s = fixture::random_shape(rng);
  return sparsify(fixture::random_pattern_weights(rng, s, set), set);
}

std::string error_of(const FkwModel& m) {
  try {
    m.validate();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sparsify keeps every nonzero kernel with its exact weights") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const PatternSet set = fixture::random_set(rng, 5);
    const LayerShape s = fixture::random_shape(rng);
    const WeightTensor w = fixture::random_pattern_weights(rng, s, set);
    const SparseLayer layer = sparsify(w, set);
    CHECK(to_dense(layer) == w);
  }
  SUBCASE("support outside the set is rejected") {
    LayerShape s;
    s.input_h = s.input_w = 3;
    WeightTensor w(s);
    for (auto& v : w.data) v = 1.0f;
    CHECK_THROWS_AS(sparsify(w, PatternSet(all_patterns())), PreconditionError);
  }
}

TEST_CASE("reorder properties") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const SparseLayer in = random_layer(rng);
    const auto [out, plan] = reorder(in);
    plan.validate(in.filters.size());
    CHECK(to_dense(out, plan) == to_dense(in));

    for (const auto& f : out.filters)
      for (std::size_t j = 1; j < f.kernels.size(); ++j)
        CHECK(std::tie(f.kernels[j - 1].pattern_id, f.kernels[j - 1].in_channel) <
              std::tie(f.kernels[j].pattern_id, f.kernels[j].in_channel));

    std::size_t covered = 0, prev_len = SIZE_MAX;
    for (const auto& g : plan.groups) {
      CHECK(g.start == covered);
      CHECK(g.filter_length < prev_len);
      prev_len = g.filter_length;
      covered = g.end;
      for (std::size_t n = g.start; n < g.end; ++n) {
        CHECK(out.filters[n].kernels.size() == g.filter_length);
        // greedy chain: the next filter is at least as similar as any later one
        for (std::size_t m = n + 2; m < g.end && n + 1 < g.end; ++m)
          CHECK(filter_similarity(out.filters[n], out.filters[n + 1]) >=
                filter_similarity(out.filters[n], out.filters[m]));
      }
    }
    CHECK(covered == in.filters.size());
    CHECK(plan.groups == length_groups(out));
  }
}

TEST_CASE("output channel reorder round trip") {
  std::mt19937_64 rng(3);
  ReorderPlan plan;
  plan.filter_permutation = {2, 0, 3, 1};
  const auto map = fixture::random_map(rng, 4, 2, 2);
  const auto back = apply_forward_reorder(apply_inverse_reorder(map, plan), plan);
  CHECK(back == map);
  CHECK(plan.inverse() == std::vector<std::uint32_t>{1, 3, 0, 2});
}

TEST_CASE("four-filter golden layout") {
  const auto [layer, plan] = fixture::four_filter_layer();
  const FkwModel m = fkw_encode(layer, plan);
  CHECK(m.offset == std::vector<std::uint32_t>{0, 2, 4, 6, 9});
  CHECK(m.reorder == std::vector<std::uint32_t>{0, 1, 3, 2});
  CHECK(m.index == std::vector<std::uint32_t>{3, 1, 0, 2, 1, 2, 0, 1, 3});
  REQUIRE(m.stride.size() == 4);
  CHECK(m.stride[0] == std::vector<std::uint32_t>{0, 1, 2});
  CHECK(m.stride[1] == std::vector<std::uint32_t>{0, 1, 2});
  CHECK(m.stride[2] == std::vector<std::uint32_t>{0, 2, 2});
  CHECK(m.stride[3] == std::vector<std::uint32_t>{0, 1, 3});
  for (std::size_t f = 0; f < 4; ++f) {
    const std::size_t n = 4 * (m.offset[f + 1] - m.offset[f]);
    CHECK(n == (f == 3 ? 12u : 8u));
  }
  CHECK(m.weights.size() == 36);
  CHECK(structure_overhead(m) == oracle::fkw_bytes(4, 9, 2));
  const auto [back, plan2] = fkw_decode(m);
  CHECK(back == layer);
  CHECK(plan2.filter_permutation == plan.filter_permutation);
}

TEST_CASE("fkw round trip on random layers") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    const SparseLayer in = random_layer(rng, 1 + rng() % 10);
    const auto [sorted, plan] = reorder(in);
    const FkwModel m = fkw_encode(sorted, plan);
    m.validate();
    const FkwModel again = fkw_deserialize(fkw_serialize(m));
    CHECK(again == m);
    CHECK(fkw_to_dense(again) == to_dense(in));
    CHECK(structure_overhead(m) == oracle::fkw_bytes(m.filters(), m.kernels(), m.pattern_set.size()));
    const auto csr = csr_from_sparse(sorted, plan);
    CHECK(structure_overhead(csr) == oracle::csr_bytes(m.filters(), m.kernels()));
  }
}

TEST_CASE("fkw rejects kernels out of pattern order") {
  auto [layer, plan] = fixture::four_filter_layer();
  std::swap(layer.filters[0].kernels[0], layer.filters[0].kernels[1]);
  CHECK_THROWS_AS(fkw_encode(layer, plan), PreconditionError);
}

TEST_CASE("fkw validation names the array and position") {
  const auto [layer, plan] = fixture::four_filter_layer();
  const FkwModel good = fkw_encode(layer, plan);
  CHECK(error_of(good).empty());

  FkwModel m = good;
  m.offset[2] = 1;
  CHECK(error_of(m).find("offset[2]") != std::string::npos);
  m = good;
  m.reorder[3] = 0;
  CHECK(error_of(m).find("reorder[3]") != std::string::npos);
  m = good;
  m.index[4] = 9;
  CHECK(error_of(m).find("index[4]") != std::string::npos);
  m = good;
  m.stride[2] = {0, 2, 1};
  CHECK(error_of(m).find("stride") != std::string::npos);
  m = good;
  m.weights.pop_back();
  CHECK(error_of(m).find("weights") != std::string::npos);
  m = good;
  m.index[1] = 3;  // filter 0 would hold channel 3 twice
  CHECK(error_of(m).find("index[1]") != std::string::npos);
}

TEST_CASE("fkw byte stream corruption") {
  const auto [layer, plan] = fixture::four_filter_layer();
  const auto bytes = fkw_serialize(fkw_encode(layer, plan));
  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(fkw_deserialize(part), FormatError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(fkw_deserialize(extra), FormatError);
  auto magic = bytes;
  magic[3] = '2';
  CHECK_THROWS_AS(fkw_deserialize(magic), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "kpat_fkw_test";
  fkw_save(dir / "a.fkw", fkw_encode(layer, plan));
  CHECK(fkw_load(dir / "a.fkw") == fkw_encode(layer, plan));
  CHECK_THROWS_AS(fkw_load(dir / "nope.fkw"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sparse layer JSON round trip") {
  std::mt19937_64 rng(6);
  const auto [layer, plan] = reorder(random_layer(rng));
  const auto [back, plan2] = sparse_layer_from_json(sparse_layer_to_json(layer, plan));
  CHECK(back == layer);
  CHECK(plan2 == plan);
  CHECK_THROWS_AS(sparse_layer_from_json("{\"shape\":1}"), FormatError);
}
