#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kpat/executor.hpp"
#include "kpat/fkw.hpp"

namespace kpat {

// A random dense layer with pattern and connectivity pruning applied in one
// projection step (no training).
struct SyntheticLayer {
  WeightTensor dense;   // before pruning
  WeightTensor pruned;  // masked
  PatternSet pattern_set;
  FeatureMap input;
};

SyntheticLayer make_synthetic_layer(const LayerShape& shape, std::size_t k, double rate, std::uint64_t seed);

// The layer used by the tuner and LRE checks: 64 -> 64 channels on a 32x32 input.
LayerShape vgg_like_shape();

struct BenchOptions {
  LayerShape shape = vgg_like_shape();
  std::size_t k = 8;
  double rate = 3.6;
  std::uint64_t seed = 1;
  std::size_t repeats = 5;
  std::size_t tune_budget = 256;  // 0 skips the tuned variant
  std::size_t threads = 1;
  std::vector<std::size_t> pattern_counts;
};

struct VariantResult {
  std::string name;
  double wall_time_ns = 0;  // median over repeats
  std::optional<LoadStats> stats;
  std::string config;  // ExecConfig JSON, empty for dense and csr
  double speedup_vs_dense = 0;
  double speedup_vs_csr = 0;
  double max_rel_error = 0;  // against the dense oracle on masked weights
};

struct PatternCountRow {
  std::size_t k = 0;
  std::size_t kernels = 0;
  double wall_time_ns = 0;
  LoadStats stats;
  std::size_t max_dispatch_per_filter = 0;
};

struct BenchReport {
  LayerShape shape;
  std::size_t k = 0;
  double rate = 0;
  std::uint64_t seed = 0;
  std::size_t kernels = 0;
  std::vector<VariantResult> variants;
  std::size_t fkw_structure_bytes = 0;
  std::size_t csr_structure_bytes = 0;
  double storage_saving_pct = 0;
  std::vector<PatternCountRow> pattern_rows;
};

BenchReport run_bench(const BenchOptions& opt);

// Largest per-filter dispatch count of a conv_fkw run with one spatial tile
// and one input-channel tile.
std::size_t max_dispatch_per_filter(const FkwModel& model, bool reorder_enabled);

std::string bench_to_json(const BenchReport& r);
std::string bench_to_markdown(const BenchReport& r);

}  // namespace kpat
