#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kpat/executor.hpp"

namespace kpat {

// Gene layout: loop order, log2 of the four tiles, unroll index into {1, 2, 4}
// for oc and iw.
inline constexpr std::size_t kGeneCount = 7;
using Chromosome = std::array<std::uint32_t, kGeneCount>;

struct SearchSpace {
  std::vector<LoopOrder> orders{std::begin(kAllLoopOrders), std::end(kAllLoopOrders)};
  std::array<std::uint32_t, 4> max_log2{};  // tile_h, tile_w, tile_oc, tile_ic
  std::uint32_t max_unroll_gene = 2;

  // Tiles up to the first power of two covering each layer dimension.
  static SearchSpace for_layer(const LayerShape& shape);
  std::uint32_t gene_limit(std::size_t gene) const;  // inclusive upper bound
  // Always yields a config normalized against `shape`.
  ExecConfig decode(const Chromosome& c, const LayerShape& shape) const;
  Chromosome encode(const ExecConfig& cfg) const;
  // Distinct normalized configs, in gene order.
  std::vector<ExecConfig> enumerate(const LayerShape& shape, std::size_t limit) const;
};

std::size_t feature_count();
std::vector<std::string> feature_names();
std::vector<double> config_features(const ExecConfig& cfg, const LayerShape& shape);

struct TuneRecord {
  std::vector<double> features;
  ExecConfig config;
  double time_ns = 0;
  std::string fingerprint;
};

std::string layer_fingerprint(const LayerShape& shape, std::size_t kernels, std::size_t patterns);

// Time in nanoseconds (or any positive cost) of one config.
using FitnessFn = std::function<double(const ExecConfig&)>;

struct TuneOptions {
  std::size_t budget = 256;
  std::uint64_t seed = 1;
  std::size_t population = 16;
  std::size_t tournament = 3;
  double mutation_rate = 0.1;
  std::size_t elitism = 2;
  // Evaluate each generation's children concurrently. Timings get noisier.
  bool parallel = false;
  SearchSpace space;  // empty orders means SearchSpace::for_layer
};

struct TuneResult {
  ExecConfig best;
  double best_time_ns = 0;
  std::vector<TuneRecord> history;  // one per evaluation, in evaluation order
};

// Median of 3 single-threaded conv_fkw runs.
FitnessFn timing_fitness(const FkwModel& model, const FeatureMap& input);

// If the whole space fits in the budget it is measured exhaustively; otherwise
// the GA spends exactly `budget` evaluations. The default ExecConfig is always
// part of the first population.
TuneResult tune(const FkwModel& model, const FeatureMap& input, const TuneOptions& opt);
TuneResult tune(const LayerShape& shape, const std::string& fingerprint, const FitnessFn& fitness,
                const TuneOptions& opt);

struct Estimator {
  std::vector<double> coef;
  double rmse = 0;
  bool regularized = false;
  std::string warning;

  double predict_log(const std::vector<double>& features) const;
  double predict(const std::vector<double>& features) const;
};

// Least squares on log(time). Rank-deficient designs fall back to ridge.
Estimator fit_estimator(const std::vector<TuneRecord>& history);

// Candidate indices by predicted time, ascending, stable.
std::vector<std::size_t> predict_best(const Estimator& est, const std::vector<std::vector<double>>& candidates);

std::string history_to_csv(const std::vector<TuneRecord>& history);

}  // namespace kpat
