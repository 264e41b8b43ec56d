#include "doctest.h"

#include <set>

#include "kpat/bench.hpp"
#include "kpat/error.hpp"
#include "kpat/tuner.hpp"
#include "support.hpp"

using namespace kpat;

namespace {

// Kendall tau-a between two score lists.
double kendall(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j, ++n) {
      const double x = (a[i] - a[j]) * (b[i] - b[j]);
      s += x > 0 ? 1 : (x < 0 ? -1 : 0);
    }
  return s / double(n);
}

}  // namespace

TEST_CASE("decode is total and encode inverts it on the lattice") {
  const LayerShape s = vgg_like_shape();
  const auto space = SearchSpace::for_layer(s);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 2000; ++t) {
    Chromosome c;
    for (auto& g : c) g = static_cast<std::uint32_t>(rng() % 40);
    const ExecConfig cfg = space.decode(c, s);
    cfg.validate();
    CHECK(cfg == cfg.normalized(s));
    CHECK(space.decode(space.encode(cfg), s) == cfg);
  }
}

TEST_CASE("space of size one costs one evaluation") {
  const LayerShape s{3, 3, 1, 1, 1, 3, 3};
  TuneOptions opt;
  opt.space.orders = {LoopOrder::kCoHwCi};
  opt.space.max_unroll_gene = 0;
  std::size_t calls = 0;
  const auto res = tune(s, "one", [&](const ExecConfig&) { return double(++calls); }, opt);
  CHECK(calls == 1);
  CHECK(res.history.size() == 1);
}

TEST_CASE("GA spends exactly the budget and is deterministic") {
  const LayerShape s = vgg_like_shape();
  const fixture::PlantedCost cost{s};
  TuneOptions opt;
  opt.budget = 100;
  opt.seed = 17;
  const auto a = tune(s, "fp", cost, opt);
  const auto b = tune(s, "fp", cost, opt);
  REQUIRE(a.history.size() == 100);
  REQUIRE(b.history.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(a.history[i].config == b.history[i].config);
    CHECK(a.history[i].time_ns == b.history[i].time_ns);
  }
  CHECK(a.history[0].config == ExecConfig{}.normalized(s));
  opt.seed = 18;
  const auto c = tune(s, "fp", cost, opt);
  bool differs = false;
  for (std::size_t i = 0; i < 100; ++i) differs |= !(a.history[i].config == c.history[i].config);
  CHECK(differs);
  for (const auto& r : a.history) CHECK(r.time_ns >= a.best_time_ns);
}

TEST_CASE("planted optimum is usually found") {
  const LayerShape s = vgg_like_shape();
  const fixture::PlantedCost cost{s};
  std::size_t hits = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    TuneOptions opt;
    opt.seed = seed;
    hits += tune(s, "fp", cost, opt).best == cost.optimum();
  }
  MESSAGE("planted optimum found in " << hits << "/100 runs");
  CHECK(hits >= 95);
}

TEST_CASE("tuner preconditions") {
  const LayerShape s = vgg_like_shape();
  TuneOptions opt;
  opt.budget = 8;
  CHECK_THROWS_AS(tune(s, "x", fixture::PlantedCost{s}, opt), PreconditionError);
  opt.budget = 64;
  CHECK_THROWS_AS(tune(s, "x", [](const ExecConfig&) { return 0.0; }, opt), PreconditionError);
}

TEST_CASE("estimator recovers a realizable cost exactly") {
  const LayerShape s = vgg_like_shape();
  std::vector<TuneRecord> hist;
  for (std::uint32_t g = 0; g <= 4; ++g)  // 32 would clamp to the 30-row output
    for (std::uint32_t o = 0; o < 4; ++o) {
      ExecConfig c;
      c.order = kAllLoopOrders[o];
      c.tile_h = std::size_t{1} << g;
      c = c.normalized(s);
      hist.push_back({config_features(c, s), c, std::exp2(double(g)), "fp"});
    }
  const Estimator est = fit_estimator(hist);
  CHECK(est.rmse < 1e-6);
  CHECK(est.regularized);  // layer-dimension features are constant here
  CHECK_FALSE(est.warning.empty());
  std::vector<std::vector<double>> cand;
  for (const auto& r : hist) cand.push_back(r.features);
  const auto rank = predict_best(est, cand);
  for (std::size_t i = 1; i < rank.size(); ++i) CHECK(hist[rank[i - 1]].time_ns <= hist[rank[i]].time_ns);
  // stable on ties: equal predicted times keep input order
  for (std::size_t i = 1; i < rank.size(); ++i)
    if (hist[rank[i - 1]].time_ns == hist[rank[i]].time_ns) CHECK(rank[i - 1] < rank[i]);

  CHECK_THROWS_AS(fit_estimator(std::vector<TuneRecord>(hist.begin(), hist.begin() + 9)), PreconditionError);
  CHECK_THROWS_AS(est.predict_log({1.0, 2.0}), ShapeError);
  CHECK(predict_best(est, {cand[3]}) == std::vector<std::size_t>{0});
}

TEST_CASE("estimator prediction is monotone in the dominant term") {
  const LayerShape s = vgg_like_shape();
  std::vector<TuneRecord> hist;
  for (std::uint32_t g = 0; g <= 5; ++g)
    for (std::uint32_t w = 0; w <= 4; ++w) {
      ExecConfig c;
      c.tile_h = std::size_t{1} << g;
      c.tile_w = std::size_t{1} << w;
      c = c.normalized(s);
      hist.push_back({config_features(c, s), c, std::exp2(3.0 * g + 0.1 * w), "fp"});
    }
  const Estimator est = fit_estimator(hist);
  auto f = hist.front().features;
  double prev = -1e300;
  for (double v = 0; v <= 5; v += 0.5) {
    f[4] = v;  // log2_tile_h
    CHECK(est.predict_log(f) > prev);
    prev = est.predict_log(f);
  }
}

TEST_CASE("estimator from the planted harness ranks the optimum near the top") {
  const LayerShape s = vgg_like_shape();
  const fixture::PlantedCost cost{s};
  TuneOptions opt;
  opt.seed = 3;
  const auto res = tune(s, "fp", cost, opt);
  const Estimator est = fit_estimator(res.history);
  const auto cands = SearchSpace::for_layer(s).enumerate(s, 100000);
  std::vector<std::vector<double>> feats;
  std::size_t planted = cands.size();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    feats.push_back(config_features(cands[i], s));
    if (cands[i] == cost.optimum()) planted = i;
  }
  REQUIRE(planted < cands.size());
  const auto rank = predict_best(est, feats);
  const auto pos = std::find(rank.begin(), rank.end(), planted) - rank.begin();
  CHECK(double(pos) < 0.1 * double(cands.size()));
}

TEST_CASE("estimator ranking agrees with measurement on 8 candidates") {
  const LayerShape s = vgg_like_shape();
  const fixture::PlantedCost cost{s};
  std::mt19937_64 rng(9);
  std::vector<TuneRecord> hist;
  const auto space = SearchSpace::for_layer(s);
  for (int i = 0; i < 60; ++i) {
    Chromosome c;
    for (std::size_t g = 0; g < kGeneCount; ++g) c[g] = static_cast<std::uint32_t>(rng() % (space.gene_limit(g) + 1));
    const auto cfg = space.decode(c, s);
    // multiplicative noise so the fit is not exact
    hist.push_back({config_features(cfg, s), cfg, cost(cfg) * (1.0 + 0.3 * fixture::uniform(rng, 0, 1)), "fp"});
  }
  const Estimator est = fit_estimator(hist);
  std::vector<double> measured, predicted;
  for (int i = 0; i < 8; ++i) {
    Chromosome c;
    for (std::size_t g = 0; g < kGeneCount; ++g) c[g] = static_cast<std::uint32_t>(rng() % (space.gene_limit(g) + 1));
    const auto cfg = space.decode(c, s);
    measured.push_back(cost(cfg));
    predicted.push_back(est.predict(config_features(cfg, s)));
  }
  CHECK(kendall(measured, predicted) >= 0.5);
}

TEST_CASE("history csv has a header and one row per record") {
  const LayerShape s = vgg_like_shape();
  TuneOptions opt;
  opt.budget = 32;
  const auto res = tune(s, "fp", fixture::PlantedCost{s}, opt);
  const auto csv = history_to_csv(res.history);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);
  CHECK(csv.rfind("perm_", 0) == 0);
}
