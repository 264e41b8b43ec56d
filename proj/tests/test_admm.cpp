#include "doctest.h"

#include <cmath>

#include "kpat/admm.hpp"
#include "kpat/error.hpp"
#include "support.hpp"

using namespace kpat;

namespace {

// ||a - b|| / max(||b||, 1e-8)
double rel_norm(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

TinyNet small_net(std::uint64_t seed, LossKind loss) {
  TinyNet net(2, 6, 6, loss);
  net.add_conv(3).add_conv(2).add_fc(2);
  net.init(seed);
  return net;
}

Dataset small_data(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d{2, 6, 6, 2, {}};
  for (int i = 0; i < 6; ++i) {
    Sample s;
    s.image.resize(72);
    for (auto& v : s.image) v = fixture::uniform(rng);
    s.label = i % 2;
    d.samples.push_back(s);
  }
  return d;
}

}  // namespace

TEST_CASE("augmented gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    const LossKind kind = seed % 2 ? LossKind::kSoftmaxCrossEntropy : LossKind::kMse;
    TinyNet net = small_net(seed, kind);
    const Dataset data = small_data(seed + 100);
    std::mt19937_64 rng(seed);
    PruneConfig cfg;
    cfg.pattern_set = fixture::random_set(rng, 4);
    cfg.connectivity_rate = 2.0;
    cfg.rho = 0.5;
    AdmmState st = init_admm_state(net, cfg);
    for (auto& la : st.layers)
      for (auto* v : {&la.u, &la.v})
        for (auto& x : *v) x = 0.1 * fixture::uniform(rng);

    std::vector<double> grad;
    augmented_loss_and_grad(net, st, data, 0, data.size(), &grad);
    const auto fd = finite_diff_grad(
        std::function<double(std::span<const double>)>([&](std::span<const double> p) {
          TinyNet n2 = net;
          std::copy(p.begin(), p.end(), n2.params().begin());
          return augmented_loss_and_grad(n2, st, data, 0, data.size(), nullptr);
        }),
        net.params(), 1e-6);
    CHECK(rel_norm(grad, fd) < 1e-3);
  }
}

TEST_CASE("auxiliary step lands in both constraint sets") {
  TinyNet net = make_toy_net(3);
  std::mt19937_64 rng(3);
  PruneConfig cfg;
  cfg.pattern_set = fixture::random_set(rng, 6);
  cfg.connectivity_rate = 3.0;
  AdmmState st = init_admm_state(net, cfg);
  admm_step_auxiliary(st, net, cfg);
  for (const auto& la : st.layers) {
    std::size_t kept = 0;
    for (std::size_t k = 0; k < la.shape.kernel_count(); ++k) {
      std::uint16_t support = 0;
      for (std::size_t c = 0; c < 9; ++c)
        if (la.z[k * 9 + c] != 0.0) support |= 1u << c;
      bool covered = false;
      for (const auto& p : cfg.pattern_set.patterns()) covered |= (support & ~p.mask()) == 0;
      CHECK(covered);
      bool any = false;
      for (std::size_t c = 0; c < 9; ++c) any |= la.y[k * 9 + c] != 0.0;
      kept += any;
    }
    CHECK(kept <= la.alpha);
  }
  // dual update: U += W - Z
  const auto u0 = st.layers[0].u;
  admm_step_dual(st, net);
  const auto w = net.conv_weights(0);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(st.layers[0].u[i] == doctest::Approx(u0[i] + w[i] - st.layers[0].z[i]));
}

TEST_CASE("hard projection is feasible and idempotent") {
  TinyNet net = make_toy_net(5);
  std::mt19937_64 rng(5);
  const PatternSet set = fixture::random_set(rng, 8);
  PruneConfig cfg;
  cfg.pattern_set = set;
  cfg.first_layer_rate = 1.0;
  cfg.connectivity_rate = 4.0;
  const auto alphas = layer_alphas(net, cfg);
  CHECK_FALSE(feasibility_violations(net, set, alphas).empty());
  hard_project(net, set, alphas);
  CHECK(feasibility_violations(net, set, alphas).empty());
  const auto before = net.params();
  hard_project(net, set, alphas);
  CHECK(net.params() == before);
}

TEST_CASE("prune config validation") {
  PruneConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.pattern_set = PatternSet(all_patterns());
  cfg.connectivity_rate = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.connectivity_rate = 2;
  cfg.rho = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("exploding learning rate reports divergence") {
  TinyNet net = make_toy_net(2);
  const Dataset data = make_blob_dataset(64, 2);
  PruneConfig cfg;
  cfg.pattern_set = PatternSet(all_patterns());
  cfg.learning_rate = 1e300;
  cfg.admm_iterations = 2;
  cfg.epochs_per_iteration = 1;
  cfg.finetune_epochs = 1;
  // Adam steps are bounded by lr, so weights jump to ~1e300 and the loss overflows.
  CHECK_THROWS_AS(prune(net, data, cfg), DivergenceError);
}

TEST_CASE("small prune run is feasible and traced") {
  TinyNet dense = make_toy_net(4);
  const Dataset data = make_blob_dataset(128, 4);
  train(dense, data, TrainOptions{5, 32, 5e-3, 4});
  PruneConfig cfg;
  cfg.pattern_set = build_pattern_set(dense.conv_tensors(), 6);
  cfg.admm_iterations = 3;
  cfg.epochs_per_iteration = 1;
  cfg.finetune_epochs = 2;
  const auto res = prune(dense, data, cfg);
  CHECK(res.trace.size() == 3);
  CHECK(feasibility_violations(res.net, cfg.pattern_set, layer_alphas(dense, cfg)).empty());
  CHECK(trace_to_csv(res.trace).rfind("iteration,", 0) == 0);
}
