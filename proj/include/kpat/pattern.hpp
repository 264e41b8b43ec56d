#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kpat/error.hpp"
#include "kpat/tensor.hpp"

namespace kpat {

inline constexpr std::size_t kPatternEntries = 4;
inline constexpr std::size_t kPatternCells = 9;
inline constexpr std::uint8_t kCenterCell = 4;
inline constexpr std::size_t kPossiblePatterns = 56;

// Four retained cells of a 3x3 kernel, stored as sorted linear indices
// (row * 3 + col). Sorting linear indices is the same as sorting (row, col)
// lexicographically, so `cells` is also the canonical ordering key.
class Pattern {
 public:
  Pattern() = default;
  // Throws ParameterError unless the cells are 4 distinct in-bounds cells including the center.
  explicit Pattern(std::array<std::uint8_t, kPatternEntries> cells);
  static Pattern from_positions(std::span<const std::pair<int, int>> positions);

  const std::array<std::uint8_t, kPatternEntries>& cells() const { return cells_; }
  std::uint16_t mask() const { return mask_; }
  bool contains(std::size_t cell) const { return (mask_ >> cell) & 1u; }
  static int row(std::uint8_t cell) { return cell / 3; }
  static int col(std::uint8_t cell) { return cell % 3; }

  auto operator<=>(const Pattern& o) const { return cells_ <=> o.cells_; }
  bool operator==(const Pattern& o) const { return cells_ == o.cells_; }

  std::string to_string() const;

 private:
  std::array<std::uint8_t, kPatternEntries> cells_{};
  std::uint16_t mask_ = 0;
};

// All 56 center-containing patterns, in canonical order.
const std::vector<Pattern>& all_patterns();

// Ordered candidate set; pattern ids are 1..k in list order.
class PatternSet {
 public:
  PatternSet() = default;
  explicit PatternSet(std::vector<Pattern> patterns);

  std::size_t size() const { return patterns_.size(); }
  bool empty() const { return patterns_.empty(); }
  const Pattern& by_id(std::size_t id) const;
  bool valid_id(std::size_t id) const { return id >= 1 && id <= patterns_.size(); }
  const std::vector<Pattern>& patterns() const { return patterns_; }

  // Canonical JSON: [[[r,c],[r,c],[r,c],[r,c]],...] with no whitespace.
  std::string to_json() const;
  static PatternSet from_json(const std::string& text);

  bool operator==(const PatternSet&) const = default;

 private:
  std::vector<Pattern> patterns_;
};

// Connectivity decision per kernel, [out_channel][in_channel] flattened row-major.
struct ConnectivityMask {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::vector<bool> kept;
  std::size_t alpha = 0;

  bool is_kept(std::size_t oc, std::size_t ic) const { return kept[oc * in_channels + ic]; }
  std::size_t kept_count() const;
};

// Center plus the three largest-magnitude non-center cells. Equal magnitudes
// go to the lexicographically smaller (row, col).
Pattern natural_pattern(std::span<const float> kernel);

// Top-k most frequent natural patterns over every 3x3 kernel of the model.
// Each kernel counts once; frequency ties fall back to canonical order.
PatternSet build_pattern_set(std::span<const WeightTensor> model, std::size_t k);

template <typename T>
double retained_sq_norm(std::span<const T> kernel, const Pattern& p) {
  double s = 0.0;
  for (auto cell : p.cells()) s += static_cast<double>(kernel[cell]) * static_cast<double>(kernel[cell]);
  return s;
}

// Euclidean projection of one 3x3 kernel onto the union of the set's
// patterns. Writes the projection into `out` (which may alias `kernel`)
// and returns the chosen 1-based pattern id; ties go to the lowest id.
template <typename T>
std::size_t project_pattern(std::span<const T> kernel, const PatternSet& set, std::span<T> out) {
  if (kernel.size() != kPatternCells || out.size() != kPatternCells) {
    throw ShapeError("pattern projection needs 3x3 kernels");
  }
  if (set.empty()) throw PreconditionError("pattern set is empty");
  std::size_t best = 1;
  double best_norm = -1.0;
  for (std::size_t id = 1; id <= set.size(); ++id) {
    const double n = retained_sq_norm(kernel, set.by_id(id));
    if (n > best_norm) {
      best_norm = n;
      best = id;
    }
  }
  const std::uint16_t mask = set.by_id(best).mask();
  for (std::size_t i = 0; i < kPatternCells; ++i) {
    out[i] = ((mask >> i) & 1u) ? kernel[i] : T(0);
  }
  return best;
}

// Keeps the `alpha` kernels with largest L2 norm; ties go to the smaller
// flat index (out_channel, in_channel).
std::vector<bool> top_kernels_by_norm(std::span<const double> sq_norms, std::size_t alpha);

ConnectivityMask project_connectivity(const WeightTensor& weights, std::size_t alpha);

// Kernels to keep for a layer of `total_kernels` under a pruning rate.
std::size_t alpha_for_rate(std::size_t total_kernels, double rate);

}  // namespace kpat
