#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kpat/fkw.hpp"
#include "kpat/tensor.hpp"

namespace kpat {

// Order of the four tile loops, outermost first: output channel (co),
// output height (h), output width (w), input channel (ci).
enum class LoopOrder { kCoHwCi, kHwCiCo, kWCiCoH, kCiCoHw };

std::string_view loop_order_name(LoopOrder o);
LoopOrder parse_loop_order(std::string_view name);
inline constexpr LoopOrder kAllLoopOrders[] = {LoopOrder::kCoHwCi, LoopOrder::kHwCiCo, LoopOrder::kWCiCoH,
                                               LoopOrder::kCiCoHw};

struct ExecConfig {
  LoopOrder order = LoopOrder::kCoHwCi;
  std::size_t tile_h = 8;
  std::size_t tile_w = 16;
  std::size_t tile_oc = 4;
  std::size_t tile_ic = 8;
  std::size_t unroll_oc = 1;
  std::size_t unroll_iw = 1;
  // Register reuse within a kernel, and across the filters of an unroll group.
  // Only takes effect on the pattern-specialized (reordered) path.
  bool lre_enabled = true;
  // false selects the per-kernel generic path: one dispatch per kernel and a
  // full P x Q window per output position.
  bool reorder_enabled = true;

  // Throws ParameterError on zero tiles or unroll factors.
  void validate() const;
  // Tiles clamped to the layer, unroll factors clamped to their tiles.
  ExecConfig normalized(const LayerShape& shape) const;

  std::string to_json() const;
  static ExecConfig from_json(const std::string& text);

  bool operator==(const ExecConfig&) const = default;
};

// Abstract load counts. An input element load is a read of one input value
// into the innermost compute scope; a weight load is one weight read per
// kernel per spatial tile; a branch event is one pattern dispatch.
struct LoadStats {
  std::uint64_t input_element_loads = 0;
  std::uint64_t weight_loads = 0;
  std::uint64_t branch_events = 0;

  LoadStats& operator+=(const LoadStats& o) {
    input_element_loads += o.input_element_loads;
    weight_loads += o.weight_loads;
    branch_events += o.branch_events;
    return *this;
  }
  bool operator==(const LoadStats&) const = default;
};

struct ExecResult {
  FeatureMap output;  // original output-channel order
  LoadStats stats;
  std::uint64_t wall_time_ns = 0;
};

// Pattern-specialized execution of an FKW layer. Output channels come back in
// original order; `threads` > 1 splits output-channel tiles across workers
// with bit-identical results.
ExecResult conv_fkw(const FeatureMap& input, const FkwModel& model, const ExecConfig& cfg, std::size_t threads = 1);

// Predicted LoadStats for conv_fkw under `cfg`, computed from the model's
// structure without running the convolution.
LoadStats lre_load_model(const FkwModel& model, const ExecConfig& cfg);

// Row-by-row CSR baseline.
FeatureMap conv_csr(const FeatureMap& input, const CsrLayer& csr);

std::string stats_to_json(const LoadStats& stats, std::uint64_t wall_time_ns);

}  // namespace kpat
