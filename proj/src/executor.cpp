#include "kpat/executor.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <thread>
#include <utility>

#include "json.hpp"

#include "kpat/error.hpp"

namespace kpat {

std::string_view loop_order_name(LoopOrder o) {
  switch (o) {
    case LoopOrder::kCoHwCi: return "cohwci_b";
    case LoopOrder::kHwCiCo: return "hwcico_b";
    case LoopOrder::kWCiCoH: return "wcicoh_b";
    case LoopOrder::kCiCoHw: return "cicohw_b";
  }
  return "?";
}

LoopOrder parse_loop_order(std::string_view name) {
  for (auto o : kAllLoopOrders)
    if (loop_order_name(o) == name) return o;
  throw ParameterError("unsupported loop permutation \"" + std::string(name) +
                       "\" (supported: cohwci_b, hwcico_b, wcicoh_b, cicohw_b)");
}

void ExecConfig::validate() const {
  if (tile_h == 0 || tile_w == 0 || tile_oc == 0 || tile_ic == 0) throw ParameterError("tile sizes must be >= 1");
  if (unroll_oc == 0 || unroll_iw == 0) throw ParameterError("unroll factors must be >= 1");
}

ExecConfig ExecConfig::normalized(const LayerShape& shape) const {
  validate();
  ExecConfig c = *this;
  c.tile_h = std::min(tile_h, shape.out_h());
  c.tile_w = std::min(tile_w, shape.out_w());
  c.tile_oc = std::min(tile_oc, shape.out_channels);
  c.tile_ic = std::min(tile_ic, shape.in_channels);
  c.unroll_oc = std::min(unroll_oc, c.tile_oc);
  c.unroll_iw = std::min(unroll_iw, c.tile_w);
  return c;
}

std::string ExecConfig::to_json() const {
  nlohmann::json j;
  j["loop_permutation"] = std::string(loop_order_name(order));
  j["tile"] = {{"h", tile_h}, {"w", tile_w}, {"oc", tile_oc}, {"ic", tile_ic}};
  j["unroll"] = {{"oc", unroll_oc}, {"iw", unroll_iw}};
  j["lre"] = lre_enabled;
  j["reorder"] = reorder_enabled;
  return j.dump();
}

ExecConfig ExecConfig::from_json(const std::string& text) {
  ExecConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("loop_permutation")) c.order = parse_loop_order(j.at("loop_permutation").get<std::string>());
    if (j.contains("tile")) {
      const auto& t = j.at("tile");
      c.tile_h = t.at("h").get<std::size_t>();
      c.tile_w = t.at("w").get<std::size_t>();
      c.tile_oc = t.at("oc").get<std::size_t>();
      c.tile_ic = t.at("ic").get<std::size_t>();
    }
    if (j.contains("unroll")) {
      c.unroll_oc = j.at("unroll").at("oc").get<std::size_t>();
      c.unroll_iw = j.at("unroll").at("iw").get<std::size_t>();
    }
    if (j.contains("lre")) c.lre_enabled = j.at("lre").get<bool>();
    if (j.contains("reorder")) c.reorder_enabled = j.at("reorder").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("exec config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

using Cells = std::array<std::uint8_t, 4>;

constexpr std::array<Cells, kPossiblePatterns> make_cells() {
  std::array<Cells, kPossiblePatterns> out{};
  std::size_t n = 0;
  for (std::uint8_t a = 0; a < 9; ++a)
    for (std::uint8_t b = a + 1; b < 9; ++b)
      for (std::uint8_t c = b + 1; c < 9; ++c)
        for (std::uint8_t d = c + 1; d < 9; ++d)
          if (a == 4 || b == 4 || c == 4 || d == 4) out[n++] = Cells{a, b, c, d};
  return out;
}

constexpr auto kCells = make_cells();

struct Geometry {
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t stride = 1;
  std::size_t out_w = 0;
  std::size_t unroll_iw = 1;
};

struct Tile {
  std::size_t y0, y1, x0, x1;
};

inline void load_segment(const float* src, std::size_t stride, std::size_t x0, std::size_t width, double* seg) {
  const float* p = src + x0 * stride;
  for (std::size_t i = 0; i < width; ++i) seg[i] = p[i * stride];
}

template <std::size_t U, typename Src>
inline void accumulate_u(double* dst, const Src* src, std::size_t step, double w, std::size_t width) {
  std::size_t x = 0;
  for (; x + U <= width; x += U)
    for (std::size_t u = 0; u < U; ++u) dst[x + u] += w * static_cast<double>(src[(x + u) * step]);
  for (; x < width; ++x) dst[x] += w * static_cast<double>(src[x * step]);
}

// dst[x] += w * src[x * step] for x < width, unrolled by `unroll`.
template <typename Src>
inline void accumulate(double* dst, const Src* src, std::size_t step, double w, std::size_t width,
                       std::size_t unroll) {
  if (step == 1) {
    if (unroll >= 4) return accumulate_u<4>(dst, src, 1, w, width);
    if (unroll == 2) return accumulate_u<2>(dst, src, 1, w, width);
    return accumulate_u<1>(dst, src, 1, w, width);
  }
  if (unroll >= 4) return accumulate_u<4>(dst, src, step, w, width);
  if (unroll == 2) return accumulate_u<2>(dst, src, step, w, width);
  return accumulate_u<1>(dst, src, step, w, width);
}

// One kernel of pattern I over a spatial tile, every tap loading its own rows.
template <std::size_t I>
void run_plain(const Geometry& g, const float* plane, const Tile& t, const float* w, double* acc, [[maybe_unused]] double* seg,
               std::uint64_t& loads) {
  constexpr Cells cells = kCells[I];
  const std::size_t width = t.x1 - t.x0;
  for (std::size_t y = t.y0; y < t.y1; ++y) {
    double* arow = acc + y * g.out_w + t.x0;
    for (std::size_t e = 0; e < 4; ++e) {
      const std::size_t r = cells[e] / 3, c = cells[e] % 3;
      loads += width;
      accumulate(arow, plane + (y * g.stride + r) * g.in_w + c + t.x0 * g.stride, g.stride, w[e], width, g.unroll_iw);
    }
  }
}

// Kernels of pattern I on one input channel for `m` filters. Each input row
// segment is loaded once and reused by every tap in the same kernel column
// and by every filter.
template <std::size_t I>
void run_lre(const Geometry& g, const float* plane, const Tile& t, const float* const* ws, double* const* accs,
             std::size_t m, double* seg, std::uint64_t& loads) {
  constexpr Cells cells = kCells[I];
  const std::size_t width = t.x1 - t.x0;
  const std::size_t s = g.stride;
  for (std::size_t col = 0; col < 3; ++col) {
    std::size_t taps[4];
    std::size_t ntaps = 0;
    for (std::size_t e = 0; e < 4; ++e)
      if (cells[e] % 3 == col) taps[ntaps++] = e;
    if (ntaps == 0) continue;
    const std::size_t rmin = cells[taps[0]] / 3;
    const std::size_t rmax = cells[taps[ntaps - 1]] / 3;
    for (std::size_t ir = t.y0 * s + rmin; ir <= (t.y1 - 1) * s + rmax; ++ir) {
      bool needed = false;
      for (std::size_t q = 0; q < ntaps; ++q) {
        const std::size_t r = cells[taps[q]] / 3;
        if (ir >= r && (ir - r) % s == 0) {
          const std::size_t y = (ir - r) / s;
          needed = needed || (y >= t.y0 && y < t.y1);
        }
      }
      if (!needed) continue;
      // Unit stride reads the row in place; otherwise gather it once.
      const float* row = plane + ir * g.in_w + col + t.x0;
      if (s != 1) load_segment(plane + ir * g.in_w + col, s, t.x0, width, seg);
      loads += width;
      for (std::size_t q = 0; q < ntaps; ++q) {
        const std::size_t e = taps[q];
        const std::size_t r = cells[e] / 3;
        if (ir < r || (ir - r) % s != 0) continue;
        const std::size_t y = (ir - r) / s;
        if (y < t.y0 || y >= t.y1) continue;
        for (std::size_t j = 0; j < m; ++j) {
          double* dst = accs[j] + y * g.out_w + t.x0;
          if (s == 1) {
            accumulate(dst, row, 1, ws[j][e], width, g.unroll_iw);
          } else {
            accumulate(dst, seg, 1, ws[j][e], width, g.unroll_iw);
          }
        }
      }
    }
  }
}

using PlainFn = void (*)(const Geometry&, const float*, const Tile&, const float*, double*, double*, std::uint64_t&);
using LreFn = void (*)(const Geometry&, const float*, const Tile&, const float* const*, double* const*, std::size_t,
                       double*, std::uint64_t&);

template <std::size_t... Is>
constexpr std::array<PlainFn, sizeof...(Is)> plain_table(std::index_sequence<Is...>) {
  return {&run_plain<Is>...};
}
template <std::size_t... Is>
constexpr std::array<LreFn, sizeof...(Is)> lre_table(std::index_sequence<Is...>) {
  return {&run_lre<Is>...};
}

constexpr auto kPlain = plain_table(std::make_index_sequence<kPossiblePatterns>{});
constexpr auto kLre = lre_table(std::make_index_sequence<kPossiblePatterns>{});

std::size_t canonical_index(const Pattern& p) {
  const auto& all = all_patterns();
  return static_cast<std::size_t>(std::lower_bound(all.begin(), all.end(), p) - all.begin());
}

// Generic path: the pattern is looked up per kernel and the whole P x Q
// window is read for every output position.
void run_generic(const Geometry& g, const float* plane, const Tile& t, const float* w, std::uint16_t mask, double* acc,
                 double* seg, std::uint64_t& loads) {
  float dense[kPatternCells] = {};
  std::size_t e = 0;
  for (std::size_t cell = 0; cell < kPatternCells; ++cell)
    if ((mask >> cell) & 1u) dense[cell] = w[e++];
  const std::size_t width = t.x1 - t.x0;
  for (std::size_t y = t.y0; y < t.y1; ++y) {
    double* arow = acc + y * g.out_w + t.x0;
    for (std::size_t cell = 0; cell < kPatternCells; ++cell) {
      load_segment(plane + (y * g.stride + cell / 3) * g.in_w + cell % 3, g.stride, t.x0, width, seg);
      loads += width;
      accumulate(arow, seg, 1, dense[cell], width, g.unroll_iw);
    }
  }
}

struct Run {
  std::uint32_t pattern;  // 1-based id
  std::uint32_t begin;    // into TileKernels::kernels
  std::uint32_t end;
};

// Kernels of one filter restricted to one input-channel tile, in stored order,
// with their pattern runs.
struct TileKernels {
  std::vector<std::uint32_t> kernels;
  std::vector<Run> runs;
};

// Kernels of one unroll group that share a pattern and an input channel.
struct SharedItem {
  std::uint32_t pattern;
  std::uint32_t ic;
  std::uint32_t begin;  // into GroupTile::kernels / slots
  std::uint32_t end;
};

struct GroupTile {
  std::vector<SharedItem> items;
  std::vector<std::uint32_t> kernels;
  std::vector<std::uint32_t> slots;  // stored filter of each kernel
  std::uint64_t dispatches = 0;
};

struct Prepared {
  const FkwModel* model = nullptr;
  ExecConfig cfg;
  Geometry geo;
  std::size_t n_co = 0, n_h = 0, n_w = 0, n_ci = 0;
  std::vector<TileKernels> tiles;  // [filter * n_ci + ci_tile]
  std::vector<std::uint32_t> pattern_of;  // per kernel
  std::vector<PlainFn> plain;              // per pattern id
  std::vector<LreFn> lre;
  std::vector<std::uint16_t> masks;
  // LRE work per unroll group and input-channel tile: [group * n_ci + ci_tile].
  std::vector<std::uint32_t> group_of_filter;
  std::vector<GroupTile> group_tiles;

  const TileKernels& at(std::size_t filter, std::size_t ci_tile) const { return tiles[filter * n_ci + ci_tile]; }
};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void build_groups(Prepared& p) {
  const FkwModel& m = *p.model;
  p.group_of_filter.assign(m.filters(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t f0 = 0; f0 < m.filters(); f0 += p.cfg.tile_oc) {
    const std::size_t f1 = std::min(m.filters(), f0 + p.cfg.tile_oc);
    for (std::size_t g0 = f0; g0 < f1; g0 += p.cfg.unroll_oc) {
      groups.emplace_back(g0, std::min(f1, g0 + p.cfg.unroll_oc));
      p.group_of_filter[g0] = static_cast<std::uint32_t>(groups.size() - 1);
    }
  }
  p.group_tiles.resize(groups.size() * p.n_ci);
  struct Entry {
    std::uint32_t pattern, ic, slot, kernel;
  };
  std::vector<Entry> entries;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (std::size_t ct = 0; ct < p.n_ci; ++ct) {
      GroupTile& gt = p.group_tiles[gi * p.n_ci + ct];
      entries.clear();
      for (std::size_t f = groups[gi].first; f < groups[gi].second; ++f) {
        const auto& tk = p.at(f, ct);
        gt.dispatches += tk.runs.size();
        for (const auto& run : tk.runs)
          for (std::uint32_t q = run.begin; q < run.end; ++q) {
            const auto g = tk.kernels[q];
            entries.push_back({run.pattern, m.index[g], static_cast<std::uint32_t>(f), g});
          }
      }
      std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.pattern != b.pattern ? a.pattern < b.pattern : a.ic < b.ic;
      });
      for (const auto& e : entries) {
        const auto pos = static_cast<std::uint32_t>(gt.kernels.size());
        if (gt.items.empty() || gt.items.back().pattern != e.pattern || gt.items.back().ic != e.ic) {
          gt.items.push_back({e.pattern, e.ic, pos, pos + 1});
        } else {
          gt.items.back().end = pos + 1;
        }
        gt.kernels.push_back(e.kernel);
        gt.slots.push_back(e.slot);
      }
    }
  }
}

Prepared prepare(const FkwModel& model, const ExecConfig& raw) {
  Prepared p;
  p.model = &model;
  p.cfg = raw.normalized(model.shape);
  const auto& s = model.shape;
  p.geo = Geometry{s.input_h, s.input_w, s.stride, s.out_w(), p.cfg.unroll_iw};
  p.n_co = ceil_div(s.out_channels, p.cfg.tile_oc);
  p.n_h = ceil_div(s.out_h(), p.cfg.tile_h);
  p.n_w = ceil_div(s.out_w(), p.cfg.tile_w);
  p.n_ci = ceil_div(s.in_channels, p.cfg.tile_ic);

  p.pattern_of.resize(model.kernels());
  for (std::size_t f = 0; f < model.filters(); ++f) {
    const auto& st = model.stride[f];
    for (std::size_t id = 1; id < st.size(); ++id)
      for (std::size_t j = st[id - 1]; j < st[id]; ++j) p.pattern_of[model.offset[f] + j] = static_cast<std::uint32_t>(id);
  }
  p.plain.resize(model.pattern_set.size() + 1);
  p.lre.resize(model.pattern_set.size() + 1);
  p.masks.resize(model.pattern_set.size() + 1);
  for (std::size_t id = 1; id <= model.pattern_set.size(); ++id) {
    const auto ci = canonical_index(model.pattern_set.by_id(id));
    p.plain[id] = kPlain[ci];
    p.lre[id] = kLre[ci];
    p.masks[id] = model.pattern_set.by_id(id).mask();
  }

  p.tiles.resize(model.filters() * p.n_ci);
  for (std::size_t f = 0; f < model.filters(); ++f) {
    for (std::uint32_t g = model.offset[f]; g < model.offset[f + 1]; ++g) {
      auto& tk = p.tiles[f * p.n_ci + model.index[g] / p.cfg.tile_ic];
      const std::uint32_t pos = static_cast<std::uint32_t>(tk.kernels.size());
      tk.kernels.push_back(g);
      if (tk.runs.empty() || tk.runs.back().pattern != p.pattern_of[g]) {
        tk.runs.push_back({p.pattern_of[g], pos, pos + 1});
      } else {
        tk.runs.back().end = pos + 1;
      }
    }
  }
  if (p.cfg.reorder_enabled && p.cfg.lre_enabled) build_groups(p);
  return p;
}

enum Dim { kCo = 0, kH = 1, kW = 2, kCi = 3 };

std::array<Dim, 4> dims_of(LoopOrder o) {
  switch (o) {
    case LoopOrder::kCoHwCi: return {kCo, kH, kW, kCi};
    case LoopOrder::kHwCiCo: return {kH, kW, kCi, kCo};
    case LoopOrder::kWCiCoH: return {kW, kCi, kCo, kH};
    case LoopOrder::kCiCoHw: return {kCi, kCo, kH, kW};
  }
  return {kCo, kH, kW, kCi};
}

// Runs the tile loop nest over output-channel tiles [co_begin, co_end).
LoadStats execute_slice(const Prepared& p, const FeatureMap& input, std::vector<double>& acc, std::size_t co_begin,
                        std::size_t co_end) {
  const FkwModel& m = *p.model;
  const ExecConfig& cfg = p.cfg;
  const auto& s = m.shape;
  const std::size_t oh = s.out_h(), ow = s.out_w(), plane_out = oh * ow;
  const std::size_t plane_in = s.input_h * s.input_w;
  std::vector<double> seg(cfg.tile_w);
  LoadStats st;

  const auto order = dims_of(cfg.order);
  std::array<std::size_t, 4> lo{co_begin, 0, 0, 0};
  std::array<std::size_t, 4> hi{co_end, p.n_h, p.n_w, p.n_ci};
  std::size_t total = 1;
  for (int d = 0; d < 4; ++d) total *= hi[d] - lo[d];

  std::vector<const float*> ws;
  std::vector<double*> accs;

  for (std::size_t linear = 0; linear < total; ++linear) {
    std::array<std::size_t, 4> idx{};
    std::size_t rem = linear;
    for (int d = 3; d >= 0; --d) {
      const Dim dim = order[d];
      const std::size_t extent = hi[dim] - lo[dim];
      idx[dim] = lo[dim] + rem % extent;
      rem /= extent;
    }
    const std::size_t f0 = idx[kCo] * cfg.tile_oc, f1 = std::min(m.filters(), f0 + cfg.tile_oc);
    const Tile t{idx[kH] * cfg.tile_h, std::min(oh, idx[kH] * cfg.tile_h + cfg.tile_h), idx[kW] * cfg.tile_w,
                 std::min(ow, idx[kW] * cfg.tile_w + cfg.tile_w)};
    const std::size_t ct = idx[kCi];

    for (std::size_t g0 = f0; g0 < f1; g0 += cfg.unroll_oc) {
      const std::size_t g1 = std::min(f1, g0 + cfg.unroll_oc);
      if (!cfg.reorder_enabled) {
        for (std::size_t f = g0; f < g1; ++f) {
          const auto& tk = p.at(f, ct);
          for (auto g : tk.kernels) {
            ++st.branch_events;
            st.weight_loads += kPatternCells;
            run_generic(p.geo, &input.data[m.index[g] * plane_in], t, &m.weights[4 * g], p.masks[p.pattern_of[g]],
                        &acc[f * plane_out], seg.data(), st.input_element_loads);
          }
        }
        continue;
      }
      if (!cfg.lre_enabled) {
        for (std::size_t f = g0; f < g1; ++f) {
          const auto& tk = p.at(f, ct);
          for (const auto& run : tk.runs) {
            ++st.branch_events;
            const PlainFn fn = p.plain[run.pattern];
            for (std::uint32_t q = run.begin; q < run.end; ++q) {
              const auto g = tk.kernels[q];
              st.weight_loads += kPatternEntries;
              fn(p.geo, &input.data[m.index[g] * plane_in], t, &m.weights[4 * g], &acc[f * plane_out], seg.data(),
                 st.input_element_loads);
            }
          }
        }
        continue;
      }
      // LRE: kernels of the unroll group that share a pattern and an input
      // channel are computed together from one set of loads.
      const GroupTile& gt = p.group_tiles[p.group_of_filter[g0] * p.n_ci + ct];
      st.branch_events += gt.dispatches;
      for (const auto& item : gt.items) {
        ws.clear();
        accs.clear();
        for (std::uint32_t q = item.begin; q < item.end; ++q) {
          ws.push_back(&m.weights[4 * gt.kernels[q]]);
          accs.push_back(&acc[gt.slots[q] * plane_out]);
        }
        st.weight_loads += kPatternEntries * (item.end - item.begin);
        p.lre[item.pattern](p.geo, &input.data[item.ic * plane_in], t, ws.data(), accs.data(), ws.size(), seg.data(),
                            st.input_element_loads);
      }
    }
  }
  return st;
}

}  // namespace

ExecResult conv_fkw(const FeatureMap& input, const FkwModel& model, const ExecConfig& cfg, std::size_t threads) {
  model.validate();
  const auto& s = model.shape;
  if (input.channels != s.in_channels || input.height != s.input_h || input.width != s.input_w) {
    throw ShapeError("input " + std::to_string(input.channels) + "x" + std::to_string(input.height) + "x" +
                     std::to_string(input.width) + " does not match layer " + s.to_string());
  }
  if (input.data.size() != input.channels * input.height * input.width) throw ShapeError("input storage mismatch");

  const auto start = std::chrono::steady_clock::now();
  const Prepared p = prepare(model, cfg);
  const std::size_t oh = s.out_h(), ow = s.out_w(), plane = oh * ow;
  std::vector<double> acc(model.filters() * plane, 0.0);

  ExecResult res;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, p.n_co);
  if (workers == 1) {
    res.stats = execute_slice(p, input, acc, 0, p.n_co);
  } else {
    std::vector<LoadStats> partial(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = p.n_co * w / workers, e = p.n_co * (w + 1) / workers;
      pool.emplace_back([&, w, b, e] { partial[w] = execute_slice(p, input, acc, b, e); });
    }
    for (auto& th : pool) th.join();
    for (const auto& ps : partial) res.stats += ps;
  }

  res.output = FeatureMap(s.out_channels, oh, ow);
  for (std::size_t n = 0; n < model.filters(); ++n) {
    const double b = model.bias[n];
    float* dst = &res.output.data[model.reorder[n] * plane];
    const double* src = &acc[n * plane];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(src[i] + b);
  }
  res.wall_time_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count());
  return res;
}

namespace {

// Distinct input rows touched by taps at kernel rows `rows` for output rows
// [y0, y1) under stride s. Taps with equal r mod s walk the same lattice, so
// each residue class is a union of shifted copies of [y0, y1).
std::uint64_t distinct_rows(const std::vector<std::size_t>& rows, std::size_t y0, std::size_t y1, std::size_t s) {
  std::uint64_t total = 0;
  for (std::size_t residue = 0; residue < s; ++residue) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (auto r : rows)
      if (r % s == residue) spans.emplace_back(y0 + r / s, y1 + r / s);
    if (spans.empty()) continue;
    std::sort(spans.begin(), spans.end());
    std::size_t cur_b = spans[0].first, cur_e = spans[0].second;
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first <= cur_e) {
        cur_e = std::max(cur_e, spans[i].second);
      } else {
        total += cur_e - cur_b;
        cur_b = spans[i].first;
        cur_e = spans[i].second;
      }
    }
    total += cur_e - cur_b;
  }
  return total;
}

std::uint64_t pattern_row_loads(const Pattern& pat, std::size_t y0, std::size_t y1, std::size_t s) {
  std::uint64_t total = 0;
  for (std::size_t col = 0; col < 3; ++col) {
    std::vector<std::size_t> rows;
    for (auto c : pat.cells())
      if (Pattern::col(c) == static_cast<int>(col)) rows.push_back(static_cast<std::size_t>(Pattern::row(c)));
    total += distinct_rows(rows, y0, y1, s);
  }
  return total;
}

}  // namespace

LoadStats lre_load_model(const FkwModel& model, const ExecConfig& raw) {
  model.validate();
  const ExecConfig cfg = raw.normalized(model.shape);
  const auto& s = model.shape;
  const std::size_t oh = s.out_h(), ow = s.out_w();
  const std::size_t k = model.pattern_set.size();
  LoadStats st;

  // Per filter: pattern id of each stored kernel.
  std::vector<std::vector<std::uint32_t>> pids(model.filters());
  for (std::size_t f = 0; f < model.filters(); ++f) {
    for (std::size_t id = 1; id <= k; ++id)
      for (std::size_t j = model.stride[f][id - 1]; j < model.stride[f][id]; ++j) pids[f].push_back(static_cast<std::uint32_t>(id));
  }

  // Spatial tiles: every kernel visits each once.
  std::uint64_t spatial_tiles = 0;
  for (std::size_t y0 = 0; y0 < oh; y0 += cfg.tile_h) spatial_tiles += ceil_div(ow, cfg.tile_w);
  (void)spatial_tiles;

  const std::size_t n_ci = ceil_div(s.in_channels, cfg.tile_ic);
  for (std::size_t y0 = 0; y0 < oh; y0 += cfg.tile_h) {
    const std::size_t y1 = std::min(oh, y0 + cfg.tile_h);
    for (std::size_t x0 = 0; x0 < ow; x0 += cfg.tile_w) {
      const std::uint64_t width = std::min(ow, x0 + cfg.tile_w) - x0;
      const std::uint64_t area = width * (y1 - y0);
      if (!cfg.reorder_enabled) {
        st.branch_events += model.kernels();
        st.weight_loads += kPatternCells * model.kernels();
        st.input_element_loads += s.kernel_size() * area * model.kernels();
        continue;
      }
      st.weight_loads += kPatternEntries * model.kernels();
      // dispatches: distinct pattern ids per filter and input-channel tile
      for (std::size_t f = 0; f < model.filters(); ++f) {
        std::vector<std::vector<bool>> seen(n_ci, std::vector<bool>(k + 1, false));
        for (std::size_t j = 0; j < pids[f].size(); ++j) {
          const std::size_t ct = model.index[model.offset[f] + j] / cfg.tile_ic;
          if (!seen[ct][pids[f][j]]) {
            seen[ct][pids[f][j]] = true;
            ++st.branch_events;
          }
        }
      }
      if (!cfg.lre_enabled) {
        st.input_element_loads += kPatternEntries * area * model.kernels();
        continue;
      }
      std::vector<std::uint64_t> rows_per_pattern(k + 1);
      for (std::size_t id = 1; id <= k; ++id)
        rows_per_pattern[id] = pattern_row_loads(model.pattern_set.by_id(id), y0, y1, s.stride);
      // Unroll groups restart at every output-channel tile.
      for (std::size_t f0 = 0; f0 < model.filters(); f0 += cfg.tile_oc) {
        const std::size_t f1 = std::min(model.filters(), f0 + cfg.tile_oc);
        for (std::size_t g0 = f0; g0 < f1; g0 += cfg.unroll_oc) {
          const std::size_t g1 = std::min(f1, g0 + cfg.unroll_oc);
          std::vector<std::pair<std::uint32_t, std::uint32_t>> shared;  // (pattern, in_channel)
          for (std::size_t f = g0; f < g1; ++f)
            for (std::size_t j = 0; j < pids[f].size(); ++j) shared.emplace_back(pids[f][j], model.index[model.offset[f] + j]);
          std::sort(shared.begin(), shared.end());
          shared.erase(std::unique(shared.begin(), shared.end()), shared.end());
          for (const auto& [id, ic] : shared) st.input_element_loads += rows_per_pattern[id] * width;
        }
      }
    }
  }
  return st;
}

FeatureMap conv_csr(const FeatureMap& input, const CsrLayer& csr) {
  const auto& s = csr.shape;
  if (input.channels != s.in_channels || input.height != s.input_h || input.width != s.input_w) {
    throw ShapeError("input does not match CSR layer " + s.to_string());
  }
  const std::size_t oh = s.out_h(), ow = s.out_w(), ks = s.kernel_size();
  FeatureMap out(s.out_channels, oh, ow);
  std::vector<double> acc(oh * ow);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    std::fill(acc.begin(), acc.end(), csr.bias.empty() ? 0.0 : static_cast<double>(csr.bias[oc]));
    for (std::size_t j = csr.row_ptr[oc]; j < csr.row_ptr[oc + 1]; ++j) {
      const std::size_t ic = csr.col_idx[j] / ks, cell = csr.col_idx[j] % ks;
      const std::size_t r = cell / s.kernel_w, c = cell % s.kernel_w;
      const double w = csr.values[j];
      for (std::size_t y = 0; y < oh; ++y) {
        const float* row = &input.data[(ic * s.input_h + y * s.stride + r) * s.input_w + c];
        for (std::size_t x = 0; x < ow; ++x) acc[y * ow + x] += w * row[x * s.stride];
      }
    }
    for (std::size_t i = 0; i < oh * ow; ++i) out.data[oc * oh * ow + i] = static_cast<float>(acc[i]);
  }
  return out;
}

std::string stats_to_json(const LoadStats& stats, std::uint64_t wall_time_ns) {
  nlohmann::json j;
  j["input_element_loads"] = stats.input_element_loads;
  j["weight_loads"] = stats.weight_loads;
  j["branch_events"] = stats.branch_events;
  j["wall_time_ns"] = wall_time_ns;
  return j.dump();
}

}  // namespace kpat
