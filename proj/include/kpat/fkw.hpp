#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kpat/reorder.hpp"

namespace kpat {

inline constexpr std::uint16_t kFkwVersion = 1;

// Filter-Kernel-Weight layout of a reordered pattern layer.
//
//   offset  C_out + 1 cumulative kernel counts per stored filter
//   reorder C_out     original output channel of each stored filter
//   index   one input channel per stored kernel
//   stride  per filter, k + 1 cumulative counts: kernels [stride[p-1], stride[p])
//           of the filter carry pattern id p
//   weights 4 per kernel, in pattern cell order
//
// bias (per stored filter) rides along as data; it is not part of the
// structure overhead.
struct FkwModel {
  LayerShape shape;
  PatternSet pattern_set;
  std::vector<std::uint32_t> offset;
  std::vector<std::uint32_t> reorder;
  std::vector<std::uint32_t> index;
  std::vector<std::vector<std::uint32_t>> stride;
  std::vector<float> weights;
  std::vector<float> bias;

  std::size_t filters() const { return reorder.size(); }
  std::size_t kernels() const { return index.size(); }

  // Throws FormatError naming the offending array and position.
  void validate() const;

  bool operator==(const FkwModel&) const = default;
};

// The layer's kernels must already be ordered by pattern id within each filter.
FkwModel fkw_encode(const SparseLayer& layer, const ReorderPlan& plan);

std::pair<SparseLayer, ReorderPlan> fkw_decode(const FkwModel& model);
std::pair<SparseLayer, ReorderPlan> fkw_decode(const FkwModel& model, const LayerShape& shape);

// Convenience: sparsify, reorder, encode.
FkwModel fkw_from_dense(const WeightTensor& weights, const PatternSet& set);
// Dense weights in original channel order.
WeightTensor fkw_to_dense(const FkwModel& model);

std::vector<std::uint8_t> fkw_serialize(const FkwModel& model);
FkwModel fkw_deserialize(std::span<const std::uint8_t> bytes);
void fkw_save(const std::filesystem::path& path, const FkwModel& model);
FkwModel fkw_load(const std::filesystem::path& path);

// Debug dump of all five arrays (plus shape, pattern set and bias).
std::string fkw_to_json(const FkwModel& model);

// CSR over the flattened (C_out) x (C_in * P * Q) weight matrix.
struct CsrLayer {
  LayerShape shape;
  std::vector<std::uint32_t> row_ptr;
  std::vector<std::uint32_t> col_idx;
  std::vector<float> values;
  std::vector<float> bias;

  void validate() const;
};

// Structural CSR: every pattern cell of every surviving kernel is stored,
// rows in original channel order.
CsrLayer csr_from_sparse(const SparseLayer& layer, const ReorderPlan& plan);
// Value-based CSR: exact zeros are skipped.
CsrLayer csr_from_dense(const WeightTensor& weights);

// Bytes of all non-weight arrays.
std::size_t structure_overhead(const FkwModel& model);
std::size_t structure_overhead(const CsrLayer& csr);

}  // namespace kpat
