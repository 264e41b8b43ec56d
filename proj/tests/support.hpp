#pragma once

// Independent reference implementations and random fixtures shared by the
// unit tests and the acceptance binary. Nothing here calls the code under
// test except for plain data types.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "kpat/executor.hpp"
#include "kpat/fkw.hpp"
#include "kpat/pattern.hpp"
#include "kpat/reorder.hpp"
#include "kpat/tensor.hpp"

namespace oracle {

// All 9-bit masks with four cells including the center, ordered by their
// sorted cell lists.
inline std::vector<std::array<int, 4>> patterns() {
  std::vector<std::array<int, 4>> out;
  for (unsigned m = 0; m < 512; ++m) {
    if (std::popcount(m) != 4 || !(m & (1u << 4))) continue;
    std::array<int, 4> cells{};
    int n = 0;
    for (int c = 0; c < 9; ++c)
      if (m & (1u << c)) cells[n++] = c;
    out.push_back(cells);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::uint16_t mask_of(const std::array<int, 4>& cells) {
  std::uint16_t m = 0;
  for (int c : cells) m |= static_cast<std::uint16_t>(1u << c);
  return m;
}

// Brute-force argmax of retained energy; first maximum wins.
inline std::size_t best_pattern(const float* kernel, const std::vector<std::uint16_t>& masks) {
  std::size_t best = 0;
  double best_e = -1;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    double e = 0;
    for (int c = 0; c < 9; ++c)
      if (masks[i] & (1u << c)) e += double(kernel[c]) * double(kernel[c]);
    if (e > best_e) {
      best_e = e;
      best = i;
    }
  }
  return best + 1;
}

// Indices of the alpha largest values after a full sort; equal values keep index order.
inline std::vector<bool> top_alpha(const std::vector<double>& v, std::size_t alpha) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] != v[b] ? v[a] > v[b] : a < b; });
  std::vector<bool> keep(v.size(), false);
  for (std::size_t i = 0; i < std::min(alpha, idx.size()); ++i) keep[idx[i]] = true;
  return keep;
}

// Direct convolution, double accumulation, every weight visited.
inline kpat::FeatureMap conv(const kpat::FeatureMap& in, const kpat::WeightTensor& w) {
  const auto& s = w.shape;
  const std::size_t oh = (s.input_h - s.kernel_h) / s.stride + 1, ow = (s.input_w - s.kernel_w) / s.stride + 1;
  kpat::FeatureMap out(s.out_channels, oh, ow);
  for (std::size_t o = 0; o < s.out_channels; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = w.bias.empty() ? 0.0 : w.bias[o];
        for (std::size_t i = 0; i < s.in_channels; ++i)
          for (std::size_t r = 0; r < s.kernel_h; ++r)
            for (std::size_t c = 0; c < s.kernel_w; ++c)
              acc += double(w.at(o, i, r, c)) * double(in.at(i, y * s.stride + r, x * s.stride + c));
        out.at(o, y, x) = static_cast<float>(acc);
      }
  return out;
}

// Load counts by enumerating the distinct (input row, kernel column) pairs
// each dispatch touches per spatial tile.
inline kpat::LoadStats loads(const kpat::FkwModel& m, const kpat::ExecConfig& raw) {
  const auto cfg = raw.normalized(m.shape);
  const auto& s = m.shape;
  const std::size_t oh = s.out_h(), ow = s.out_w();
  kpat::LoadStats st;
  auto pid = [&](std::size_t f, std::size_t j) {
    std::size_t p = 1;
    while (m.stride[f][p] <= j) ++p;
    return p;
  };
  for (std::size_t y0 = 0; y0 < oh; y0 += cfg.tile_h)
    for (std::size_t x0 = 0; x0 < ow; x0 += cfg.tile_w) {
      const std::size_t y1 = std::min(oh, y0 + cfg.tile_h);
      const std::size_t width = std::min(ow, x0 + cfg.tile_w) - x0;
      for (std::size_t f0 = 0; f0 < m.filters(); f0 += cfg.tile_oc) {
        const std::size_t f1 = std::min(m.filters(), f0 + cfg.tile_oc);
        for (std::size_t g0 = f0; g0 < f1; g0 += cfg.unroll_oc) {
          const std::size_t g1 = std::min(f1, g0 + cfg.unroll_oc);
          // (ic tile, pattern) dispatches per filter; shared (pattern, ic) per group
          std::set<std::tuple<std::size_t, std::size_t, std::size_t>> runs;
          std::set<std::pair<std::size_t, std::size_t>> shared;
          for (std::size_t f = g0; f < g1; ++f)
            for (std::size_t j = 0; j < m.offset[f + 1] - m.offset[f]; ++j) {
              const std::size_t ic = m.index[m.offset[f] + j], p = pid(f, j);
              runs.insert({f, ic / cfg.tile_ic, p});
              shared.insert({p, ic});
              if (!cfg.reorder_enabled) {
                st.branch_events += 1;
                st.weight_loads += 9;
                st.input_element_loads += 9 * (y1 - y0) * width;
              } else {
                st.weight_loads += 4;
                if (!cfg.lre_enabled) st.input_element_loads += 4 * (y1 - y0) * width;
              }
            }
          if (!cfg.reorder_enabled) continue;
          st.branch_events += runs.size();
          if (!cfg.lre_enabled) continue;
          for (const auto& [p, ic] : shared) {
            std::set<std::pair<std::size_t, std::size_t>> rows;
            for (auto cell : m.pattern_set.by_id(p).cells())
              for (std::size_t y = y0; y < y1; ++y) rows.insert({y * s.stride + cell / 3, cell % 3});
            st.input_element_loads += rows.size() * width;
          }
        }
      }
    }
  return st;
}

inline std::size_t fkw_bytes(std::size_t filters, std::size_t kernels, std::size_t k) {
  return 4 * ((filters + 1) + filters + kernels + filters * (k + 1));
}
inline std::size_t csr_bytes(std::size_t filters, std::size_t kernels) { return 4 * ((filters + 1) + 4 * kernels); }

}  // namespace oracle

namespace fixture {

inline float uniform(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return static_cast<float>(lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1p-53));
}

inline kpat::Pattern pat(std::vector<std::pair<int, int>> pos) { return kpat::Pattern::from_positions(pos); }

inline kpat::FeatureMap random_map(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  kpat::FeatureMap m(c, h, w);
  for (auto& v : m.data) v = uniform(rng);
  return m;
}

inline kpat::PatternSet random_set(std::mt19937_64& rng, std::size_t k) {
  auto all = kpat::all_patterns();
  for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[rng() % (i + 1)]);
  all.resize(k);
  return kpat::PatternSet(all);
}

// Dense tensor whose kernels are each empty or exactly one set pattern with
// nonzero entries.
inline kpat::WeightTensor random_pattern_weights(std::mt19937_64& rng, const kpat::LayerShape& shape,
                                                 const kpat::PatternSet& set, double keep = 0.6) {
  kpat::WeightTensor w(shape);
  for (std::size_t o = 0; o < shape.out_channels; ++o) {
    w.bias[o] = uniform(rng, -0.5, 0.5);
    for (std::size_t i = 0; i < shape.in_channels; ++i) {
      if (uniform(rng, 0, 1) >= keep) continue;
      const auto& p = set.by_id(1 + rng() % set.size());
      auto k = w.kernel(o, i);
      for (auto c : p.cells()) {
        float v = uniform(rng, 0.1, 1.0);
        k[c] = (rng() & 1) ? v : -v;
      }
    }
  }
  return w;
}

inline kpat::LayerShape random_shape(std::mt19937_64& rng) {
  kpat::LayerShape s;
  s.in_channels = 1 + rng() % 6;
  s.out_channels = 1 + rng() % 7;
  s.stride = 1 + rng() % 2;
  s.input_h = 3 + rng() % 9;
  s.input_w = 3 + rng() % 9;
  return s;
}

// The four-filter example layer: stored lengths 2, 2, 2, 3 with stored
// filters 2 and 3 swapped, two patterns, four input channels.
inline std::pair<kpat::SparseLayer, kpat::ReorderPlan> four_filter_layer() {
  kpat::LayerShape shape;
  shape.in_channels = 4;
  shape.out_channels = 4;
  shape.input_h = 6;
  shape.input_w = 6;
  const kpat::PatternSet set({pat({{0, 1}, {1, 0}, {1, 1}, {1, 2}}), pat({{1, 0}, {1, 1}, {1, 2}, {2, 1}})});
  // (pattern, in_channel) per stored filter
  const std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> layout{
      {{1, 3}, {2, 1}}, {{1, 0}, {2, 2}}, {{1, 1}, {1, 2}}, {{1, 0}, {2, 1}, {2, 3}}};
  const float bias[] = {0.5f, -0.25f, 0.125f, 1.0f};
  kpat::SparseLayer layer{shape, {}, set};
  int n = 0;
  for (std::size_t f = 0; f < layout.size(); ++f) {
    kpat::SparseFilter filter;
    filter.bias = bias[f];
    for (auto [p, ic] : layout[f]) {
      kpat::SparseKernel k;
      k.pattern_id = p;
      k.in_channel = ic;
      for (auto& w : k.weights) {
        ++n;
        w = static_cast<float>((n % 2 ? 1 : -1) * 0.125 * n);
      }
      filter.kernels.push_back(k);
    }
    layer.filters.push_back(filter);
  }
  kpat::ReorderPlan plan;
  plan.filter_permutation = {0, 1, 3, 2};
  plan.groups = kpat::length_groups(layer);
  return {layer, plan};
}

// Mock cost for the tuner: every halving of a tile below the layer dimension
// doubles the time, as do the wrong loop order and each unroll step. The
// only optimum is full tiles, `order`, no unroll.
struct PlantedCost {
  kpat::LayerShape shape;
  kpat::LoopOrder order = kpat::LoopOrder::kWCiCoH;

  kpat::ExecConfig optimum() const {
    kpat::ExecConfig c;
    c.order = order;
    c.tile_h = shape.out_h();
    c.tile_w = shape.out_w();
    c.tile_oc = shape.out_channels;
    c.tile_ic = shape.in_channels;
    c.unroll_oc = c.unroll_iw = 1;
    return c;
  }
  double operator()(const kpat::ExecConfig& c) const {
    auto deficit = [](std::size_t full, std::size_t tile) { return std::log2(double(full) / double(tile)); };
    const double e = deficit(shape.out_h(), c.tile_h) + deficit(shape.out_w(), c.tile_w) +
                     deficit(shape.out_channels, c.tile_oc) + deficit(shape.in_channels, c.tile_ic) +
                     (c.order == order ? 0.0 : 2.0) + std::log2(double(c.unroll_oc)) + std::log2(double(c.unroll_iw));
    return 1000.0 * std::exp2(e);
  }
};

}  // namespace fixture
