#include "kpat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"

#include "kpat/error.hpp"
#include "kpat/tuner.hpp"

namespace kpat {

namespace {

template <typename F>
double median_time(std::size_t repeats, F&& fn) {
  std::vector<double> t;
  for (std::size_t i = 0; i < std::max<std::size_t>(repeats, 1); ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::max(1.0, static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count())));
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

FkwModel filter_slice(const FkwModel& m, std::size_t f) {
  FkwModel s;
  s.shape = m.shape;
  s.shape.out_channels = 1;
  s.pattern_set = m.pattern_set;
  const std::uint32_t b = m.offset[f], e = m.offset[f + 1];
  s.offset = {0, e - b};
  s.reorder = {0};
  s.index.assign(m.index.begin() + b, m.index.begin() + e);
  s.stride = {m.stride[f]};
  s.weights.assign(m.weights.begin() + 4 * b, m.weights.begin() + 4 * e);
  s.bias = {m.bias[f]};
  return s;
}

}  // namespace

LayerShape vgg_like_shape() {
  LayerShape s;
  s.in_channels = 64;
  s.out_channels = 64;
  s.input_h = 32;
  s.input_w = 32;
  return s;
}

SyntheticLayer make_synthetic_layer(const LayerShape& shape, std::size_t k, double rate, std::uint64_t seed) {
  shape.validate();
  if (shape.kernel_h != 3 || shape.kernel_w != 3) throw ShapeError("synthetic layers are 3x3");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  SyntheticLayer out;
  out.dense = WeightTensor(shape);
  for (auto& w : out.dense.data) w = static_cast<float>(gauss(rng));
  for (auto& b : out.dense.bias) b = static_cast<float>(0.1 * gauss(rng));
  out.input = FeatureMap(shape.in_channels, shape.input_h, shape.input_w);
  for (auto& v : out.input.data) v = static_cast<float>(uni(rng));

  out.pattern_set = build_pattern_set(std::span<const WeightTensor>(&out.dense, 1), k);
  out.pruned = out.dense;
  for (std::size_t oc = 0; oc < shape.out_channels; ++oc)
    for (std::size_t ic = 0; ic < shape.in_channels; ++ic) {
      auto kern = out.pruned.kernel(oc, ic);
      project_pattern<float>(kern, out.pattern_set, kern);
    }
  const auto mask = project_connectivity(out.pruned, alpha_for_rate(shape.kernel_count(), rate));
  for (std::size_t oc = 0; oc < shape.out_channels; ++oc)
    for (std::size_t ic = 0; ic < shape.in_channels; ++ic)
      if (!mask.is_kept(oc, ic)) std::fill_n(out.pruned.kernel(oc, ic).begin(), shape.kernel_size(), 0.0f);
  return out;
}

std::size_t max_dispatch_per_filter(const FkwModel& model, bool reorder_enabled) {
  ExecConfig cfg;
  cfg.tile_h = model.shape.out_h();
  cfg.tile_w = model.shape.out_w();
  cfg.tile_ic = model.shape.in_channels;
  cfg.tile_oc = 1;
  cfg.reorder_enabled = reorder_enabled;
  cfg.lre_enabled = reorder_enabled;
  std::size_t worst = 0;
  for (std::size_t f = 0; f < model.filters(); ++f) {
    const FkwModel one = filter_slice(model, f);
    FeatureMap in(model.shape.in_channels, model.shape.input_h, model.shape.input_w);
    worst = std::max<std::size_t>(worst, conv_fkw(in, one, cfg).stats.branch_events);
  }
  return worst;
}

BenchReport run_bench(const BenchOptions& opt) {
  const SyntheticLayer layer = make_synthetic_layer(opt.shape, opt.k, opt.rate, opt.seed);
  const FkwModel model = fkw_from_dense(layer.pruned, layer.pattern_set);
  const auto [sparse, plan] = fkw_decode(model);
  const CsrLayer csr = csr_from_sparse(sparse, plan);
  const FeatureMap oracle = conv_dense(layer.input, layer.pruned);

  BenchReport r;
  r.shape = opt.shape;
  r.k = layer.pattern_set.size();
  r.rate = opt.rate;
  r.seed = opt.seed;
  r.kernels = model.kernels();
  r.fkw_structure_bytes = structure_overhead(model);
  r.csr_structure_bytes = structure_overhead(csr);
  r.storage_saving_pct =
      100.0 * (1.0 - static_cast<double>(r.fkw_structure_bytes) / static_cast<double>(r.csr_structure_bytes));

  {
    VariantResult v;
    v.name = "dense";
    FeatureMap out;
    v.wall_time_ns = median_time(opt.repeats, [&] { out = conv_dense(layer.input, layer.dense); });
    v.max_rel_error = max_rel_error(conv_dense(layer.input, layer.pruned).data, oracle.data);
    r.variants.push_back(v);
  }
  {
    VariantResult v;
    v.name = "csr";
    FeatureMap out;
    v.wall_time_ns = median_time(opt.repeats, [&] { out = conv_csr(layer.input, csr); });
    v.max_rel_error = max_rel_error(out.data, oracle.data);
    r.variants.push_back(v);
  }

  auto fkw_variant = [&](const std::string& name, const ExecConfig& cfg) {
    VariantResult v;
    v.name = name;
    ExecResult res;
    v.wall_time_ns = median_time(opt.repeats, [&] { res = conv_fkw(layer.input, model, cfg, opt.threads); });
    v.stats = res.stats;
    v.config = cfg.normalized(opt.shape).to_json();
    v.max_rel_error = max_rel_error(res.output.data, oracle.data);
    r.variants.push_back(v);
  };
  ExecConfig noopt;
  noopt.reorder_enabled = false;
  noopt.lre_enabled = false;
  ExecConfig reord;
  reord.lre_enabled = false;
  fkw_variant("fkw_noopt", noopt);
  fkw_variant("fkw_reorder", reord);
  fkw_variant("fkw_lre", ExecConfig{});
  if (opt.tune_budget > 0) {
    TuneOptions to;
    to.budget = opt.tune_budget;
    to.seed = opt.seed;
    fkw_variant("fkw_tuned", tune(model, layer.input, to).best);
  }

  const double dense_t = r.variants[0].wall_time_ns, csr_t = r.variants[1].wall_time_ns;
  for (auto& v : r.variants) {
    v.speedup_vs_dense = dense_t / v.wall_time_ns;
    v.speedup_vs_csr = csr_t / v.wall_time_ns;
  }

  for (std::size_t k : opt.pattern_counts) {
    const SyntheticLayer lk = make_synthetic_layer(opt.shape, k, opt.rate, opt.seed);
    const FkwModel mk = fkw_from_dense(lk.pruned, lk.pattern_set);
    PatternCountRow row;
    row.k = k;
    row.kernels = mk.kernels();
    ExecResult res;
    row.wall_time_ns = median_time(opt.repeats, [&] { res = conv_fkw(lk.input, mk, ExecConfig{}, opt.threads); });
    row.stats = res.stats;
    row.max_dispatch_per_filter = max_dispatch_per_filter(mk, true);
    r.pattern_rows.push_back(row);
  }
  return r;
}

std::string bench_to_json(const BenchReport& r) {
  nlohmann::json j;
  j["layer"] = {{"in_channels", r.shape.in_channels}, {"out_channels", r.shape.out_channels},
                {"input_h", r.shape.input_h},         {"input_w", r.shape.input_w},
                {"stride", r.shape.stride},           {"kernels", r.kernels}};
  j["k"] = r.k;
  j["rate"] = r.rate;
  j["seed"] = r.seed;
  j["variants"] = nlohmann::json::array();
  for (const auto& v : r.variants) {
    nlohmann::json vj;
    vj["name"] = v.name;
    vj["wall_time_ns"] = v.wall_time_ns;
    vj["speedup_vs_dense"] = v.speedup_vs_dense;
    vj["speedup_vs_csr"] = v.speedup_vs_csr;
    vj["max_rel_error"] = v.max_rel_error;
    vj["config"] = v.config.empty() ? nlohmann::json(nullptr) : nlohmann::json::parse(v.config);
    if (v.stats) {
      vj["stats"] = {{"input_element_loads", v.stats->input_element_loads},
                     {"weight_loads", v.stats->weight_loads},
                     {"branch_events", v.stats->branch_events}};
    } else {
      vj["stats"] = nullptr;
    }
    j["variants"].push_back(vj);
  }
  j["storage"] = {{"fkw_structure_bytes", r.fkw_structure_bytes},
                  {"csr_structure_bytes", r.csr_structure_bytes},
                  {"saving_pct", r.storage_saving_pct}};
  j["pattern_counts"] = nlohmann::json::array();
  for (const auto& p : r.pattern_rows) {
    j["pattern_counts"].push_back({{"k", p.k},
                                   {"kernels", p.kernels},
                                   {"wall_time_ns", p.wall_time_ns},
                                   {"input_element_loads", p.stats.input_element_loads},
                                   {"branch_events", p.stats.branch_events},
                                   {"max_dispatch_per_filter", p.max_dispatch_per_filter}});
  }
  return j.dump(2) + "\n";
}

std::string bench_to_markdown(const BenchReport& r) {
  std::ostringstream os;
  os << "# Layer " << r.shape.out_channels << "x" << r.shape.in_channels << "x3x3 on " << r.shape.input_h << "x"
     << r.shape.input_w << ", k=" << r.k << ", rate " << r.rate << ", " << r.kernels << " kernels\n\n";
  os << "| variant | time (us) | vs dense | vs csr | input loads | weight loads | dispatches | max rel err |\n";
  os << "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  os << std::fixed;
  for (const auto& v : r.variants) {
    os << "| " << v.name << " | " << std::setprecision(1) << v.wall_time_ns / 1e3 << " | " << std::setprecision(2)
       << v.speedup_vs_dense << "x | " << v.speedup_vs_csr << "x | ";
    if (v.stats) {
      os << v.stats->input_element_loads << " | " << v.stats->weight_loads << " | " << v.stats->branch_events;
    } else {
      os << "- | - | -";
    }
    os << " | " << std::scientific << std::setprecision(1) << v.max_rel_error << std::fixed << " |\n";
  }
  os << "\n## Structure overhead\n\n| format | bytes |\n|---|---:|\n";
  os << "| FKW | " << r.fkw_structure_bytes << " |\n| CSR | " << r.csr_structure_bytes << " |\n";
  os << "\nFKW saves " << std::setprecision(1) << r.storage_saving_pct << "% of the CSR index bytes.\n";
  if (!r.pattern_rows.empty()) {
    os << "\n## Pattern count\n\n| k | kernels | time (us) | dispatches | max per filter | input loads |\n";
    os << "|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& p : r.pattern_rows) {
      os << "| " << p.k << " | " << p.kernels << " | " << std::setprecision(1) << p.wall_time_ns / 1e3 << " | "
         << p.stats.branch_events << " | " << p.max_dispatch_per_filter << " | " << p.stats.input_element_loads
         << " |\n";
    }
  }
  return os.str();
}

}  // namespace kpat
