#include "doctest.h"

#include <filesystem>
#include <limits>

#include "kpat/error.hpp"
#include "kpat/io.hpp"
#include "support.hpp"

using namespace kpat;

TEST_CASE("dense convolution matches the naive loop") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 40; ++t) {
    LayerShape s = fixture::random_shape(rng);
    WeightTensor w(s);
    for (auto& v : w.data) v = fixture::uniform(rng);
    for (auto& v : w.bias) v = fixture::uniform(rng);
    const auto in = fixture::random_map(rng, s.in_channels, s.input_h, s.input_w);
    const auto got = conv_dense(in, w);
    const auto ref = oracle::conv(in, w);
    CHECK(got == ref);
  }
}

TEST_CASE("shape checks") {
  LayerShape s;
  s.input_h = 2;
  s.input_w = 5;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s.input_h = 5;
  s.in_channels = 0;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s.in_channels = 2;
  s.stride = 2;
  CHECK(s.out_h() == 2);
  WeightTensor w(s);
  FeatureMap wrong(3, 5, 5);
  CHECK_THROWS_AS(conv_dense(wrong, w), ShapeError);
  w.data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(w.validate(), ParameterError);
}

TEST_CASE("relu and relative error") {
  FeatureMap m(1, 1, 3);
  m.data = {-1.0f, 0.0f, 2.0f};
  relu_inplace(m);
  CHECK(m.data == std::vector<float>{0.0f, 0.0f, 2.0f});
  const std::vector<float> a{1.0f, 2.0f}, b{1.0f, 2.5f};
  CHECK(max_rel_error(a, b) == doctest::Approx(0.2));
}

TEST_CASE("finite differences are exact on a quadratic") {
  std::vector<double> p{0.5, -1.25, 3.0};
  auto f = [](std::span<const double> x) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (i + 1) * x[i] * x[i];
    return s;
  };
  const auto g = finite_diff_grad(std::function<double(std::span<const double>)>(f), p, 1e-3);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(g[i] == doctest::Approx(2.0 * (i + 1) * p[i]).epsilon(1e-9));
}

TEST_CASE("PTK0 round trip and corrupt input") {
  std::mt19937_64 rng(2);
  LayerShape s = fixture::random_shape(rng);
  WeightTensor w(s);
  for (auto& v : w.data) v = fixture::uniform(rng);
  for (auto& v : w.bias) v = fixture::uniform(rng);
  std::vector<TensorRecord> recs;
  append_weight_records(w, recs);
  const auto bytes = encode_ptk(recs);
  const auto back = decode_ptk(bytes);
  CHECK(weights_from_records(back) == w);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_ptk(cut), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_ptk(bad), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "kpat_io_test";
  std::filesystem::create_directories(dir);
  const auto map = fixture::random_map(rng, 2, 3, 4);
  save_feature(dir / "m.ptk", map);
  CHECK(load_feature(dir / "m.ptk") == map);
  CHECK_THROWS_AS(load_feature(dir / "missing.ptk"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fnv1a64 reference values") {
  const std::vector<std::uint8_t> empty;
  CHECK(fnv1a64(empty) == 0xcbf29ce484222325ull);
  const std::vector<std::uint8_t> a{'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cull);
}
