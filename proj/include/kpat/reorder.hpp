#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kpat/pattern.hpp"
#include "kpat/tensor.hpp"

namespace kpat {

// One surviving 3x3 kernel; `weights` follow the pattern's cell order.
struct SparseKernel {
  std::uint32_t in_channel = 0;
  std::uint32_t pattern_id = 0;
  std::array<float, kPatternEntries> weights{};

  bool operator==(const SparseKernel&) const = default;
};

struct SparseFilter {
  std::vector<SparseKernel> kernels;
  float bias = 0.0f;

  bool operator==(const SparseFilter&) const = default;
};

// A pattern-pruned CONV layer: filters in their current (possibly reordered) order.
struct SparseLayer {
  LayerShape shape;
  std::vector<SparseFilter> filters;
  PatternSet pattern_set;

  void validate() const;
  std::size_t kernel_count() const;

  bool operator==(const SparseLayer&) const = default;
};

struct GroupBoundary {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t filter_length = 0;

  bool operator==(const GroupBoundary&) const = default;
};

struct ReorderPlan {
  // filter_permutation[n] is the original output channel of stored filter n.
  std::vector<std::uint32_t> filter_permutation;
  std::vector<GroupBoundary> groups;

  static ReorderPlan identity(std::size_t filters);
  // Stored index of original channel `c`.
  std::vector<std::uint32_t> inverse() const;
  void validate(std::size_t filters) const;
  std::string to_json() const;

  bool operator==(const ReorderPlan&) const = default;
};

// Maximal runs of equal filter length.
std::vector<GroupBoundary> length_groups(const SparseLayer& layer);

// Builds the sparse view of a pattern-pruned dense layer. Each nonzero kernel
// takes the lowest pattern id whose mask covers its support.
SparseLayer sparsify(const WeightTensor& weights, const PatternSet& set);

// Dense tensor with filters in their stored order.
WeightTensor to_dense(const SparseLayer& layer);
// Dense tensor with filters moved back to their original channels.
WeightTensor to_dense(const SparseLayer& layer, const ReorderPlan& plan);

// Kernel order within each filter: (pattern_id, in_channel).
void sort_kernels(SparseLayer& layer);

// Number of positions j at which both filters carry the same pattern id.
std::size_t filter_similarity(const SparseFilter& a, const SparseFilter& b);

// Filter kernel reorder: kernels sorted per filter, filters grouped by
// decreasing length, greedy similarity chain within each group.
std::pair<SparseLayer, ReorderPlan> reorder(const SparseLayer& layer);

// channel c of the result is channel inverse[c] of `output`.
FeatureMap apply_inverse_reorder(const FeatureMap& output, const ReorderPlan& plan);
// The opposite direction: channel n of the result is channel perm[n].
FeatureMap apply_forward_reorder(const FeatureMap& output, const ReorderPlan& plan);

// JSON form of a sparse layer (plus plan) used by the reorder/encode CLI steps.
std::string sparse_layer_to_json(const SparseLayer& layer, const ReorderPlan& plan);
std::pair<SparseLayer, ReorderPlan> sparse_layer_from_json(const std::string& text);

}  // namespace kpat
