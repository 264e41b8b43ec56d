#include "kpat/reorder.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

#include "kpat/error.hpp"

namespace kpat {

void SparseLayer::validate() const {
  shape.validate();
  if (shape.kernel_h != 3 || shape.kernel_w != 3) throw ShapeError("sparse layers hold 3x3 kernels only");
  if (filters.size() != shape.out_channels) {
    throw ShapeError("sparse layer has " + std::to_string(filters.size()) + " filters, shape says " +
                     std::to_string(shape.out_channels));
  }
  for (std::size_t f = 0; f < filters.size(); ++f) {
    std::vector<bool> seen(shape.in_channels, false);
    for (const auto& k : filters[f].kernels) {
      if (k.in_channel >= shape.in_channels) {
        throw ShapeError("filter " + std::to_string(f) + " references input channel " + std::to_string(k.in_channel));
      }
      if (seen[k.in_channel]) {
        throw ShapeError("filter " + std::to_string(f) + " repeats input channel " + std::to_string(k.in_channel));
      }
      seen[k.in_channel] = true;
      if (!pattern_set.valid_id(k.pattern_id)) {
        throw ParameterError("filter " + std::to_string(f) + " uses unknown pattern id " + std::to_string(k.pattern_id));
      }
    }
  }
}

std::size_t SparseLayer::kernel_count() const {
  std::size_t n = 0;
  for (const auto& f : filters) n += f.kernels.size();
  return n;
}

ReorderPlan ReorderPlan::identity(std::size_t filters) {
  ReorderPlan p;
  p.filter_permutation.resize(filters);
  std::iota(p.filter_permutation.begin(), p.filter_permutation.end(), 0u);
  return p;
}

std::vector<std::uint32_t> ReorderPlan::inverse() const {
  std::vector<std::uint32_t> inv(filter_permutation.size());
  for (std::size_t n = 0; n < filter_permutation.size(); ++n) inv[filter_permutation[n]] = static_cast<std::uint32_t>(n);
  return inv;
}

void ReorderPlan::validate(std::size_t filters) const {
  if (filter_permutation.size() != filters) throw ShapeError("reorder plan length does not match filter count");
  std::vector<bool> seen(filters, false);
  for (auto p : filter_permutation) {
    if (p >= filters || seen[p]) throw ParameterError("reorder plan is not a permutation");
    seen[p] = true;
  }
  std::size_t expect = 0;
  for (const auto& g : groups) {
    if (g.start != expect || g.end <= g.start) throw ParameterError("reorder groups do not partition the filters");
    expect = g.end;
  }
  if (!groups.empty() && expect != filters) throw ParameterError("reorder groups do not cover every filter");
}

std::string ReorderPlan::to_json() const {
  nlohmann::json j;
  j["filter_permutation"] = filter_permutation;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) j["groups"].push_back({g.start, g.end, g.filter_length});
  return j.dump();
}

std::vector<GroupBoundary> length_groups(const SparseLayer& layer) {
  std::vector<GroupBoundary> groups;
  for (std::size_t f = 0; f < layer.filters.size(); ++f) {
    const std::size_t len = layer.filters[f].kernels.size();
    if (groups.empty() || groups.back().filter_length != len) {
      groups.push_back({f, f + 1, len});
    } else {
      groups.back().end = f + 1;
    }
  }
  return groups;
}

SparseLayer sparsify(const WeightTensor& weights, const PatternSet& set) {
  weights.validate();
  const auto& s = weights.shape;
  if (s.kernel_h != 3 || s.kernel_w != 3) throw ShapeError("only 3x3 layers can be pattern-encoded");
  if (set.empty()) throw PreconditionError("pattern set is empty");
  SparseLayer layer{s, std::vector<SparseFilter>(s.out_channels), set};
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    layer.filters[oc].bias = weights.bias[oc];
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      const auto k = weights.kernel(oc, ic);
      std::uint16_t support = 0;
      for (std::size_t i = 0; i < kPatternCells; ++i)
        if (k[i] != 0.0f) support = static_cast<std::uint16_t>(support | (1u << i));
      if (support == 0) continue;
      std::size_t id = 0;
      for (std::size_t p = 1; p <= set.size() && id == 0; ++p)
        if ((support & ~set.by_id(p).mask()) == 0) id = p;
      if (id == 0) {
        throw PreconditionError("kernel (" + std::to_string(oc) + "," + std::to_string(ic) +
                                ") does not fit any pattern in the set");
      }
      SparseKernel sk;
      sk.in_channel = static_cast<std::uint32_t>(ic);
      sk.pattern_id = static_cast<std::uint32_t>(id);
      const auto& cells = set.by_id(id).cells();
      for (std::size_t e = 0; e < kPatternEntries; ++e) sk.weights[e] = k[cells[e]];
      layer.filters[oc].kernels.push_back(sk);
    }
  }
  return layer;
}

WeightTensor to_dense(const SparseLayer& layer) { return to_dense(layer, ReorderPlan::identity(layer.filters.size())); }

WeightTensor to_dense(const SparseLayer& layer, const ReorderPlan& plan) {
  layer.validate();
  plan.validate(layer.filters.size());
  WeightTensor w(layer.shape);
  for (std::size_t n = 0; n < layer.filters.size(); ++n) {
    const std::size_t oc = plan.filter_permutation[n];
    w.bias[oc] = layer.filters[n].bias;
    for (const auto& k : layer.filters[n].kernels) {
      auto dst = w.kernel(oc, k.in_channel);
      const auto& cells = layer.pattern_set.by_id(k.pattern_id).cells();
      for (std::size_t e = 0; e < kPatternEntries; ++e) dst[cells[e]] = k.weights[e];
    }
  }
  return w;
}

void sort_kernels(SparseLayer& layer) {
  for (auto& f : layer.filters) {
    std::sort(f.kernels.begin(), f.kernels.end(), [](const SparseKernel& a, const SparseKernel& b) {
      return std::tie(a.pattern_id, a.in_channel) < std::tie(b.pattern_id, b.in_channel);
    });
  }
}

std::size_t filter_similarity(const SparseFilter& a, const SparseFilter& b) {
  const std::size_t n = std::min(a.kernels.size(), b.kernels.size());
  std::size_t same = 0;
  for (std::size_t j = 0; j < n; ++j) same += a.kernels[j].pattern_id == b.kernels[j].pattern_id ? 1 : 0;
  return same;
}

std::pair<SparseLayer, ReorderPlan> reorder(const SparseLayer& input) {
  input.validate();
  SparseLayer sorted = input;
  sort_kernels(sorted);
  const std::size_t n = sorted.filters.size();

  auto signature = [&](std::size_t f) {
    std::vector<std::uint32_t> sig;
    for (const auto& k : sorted.filters[f].kernels) sig.push_back(k.pattern_id);
    return sig;
  };

  // Bucket by length, longest first.
  std::vector<std::size_t> lengths_desc;
  for (const auto& f : sorted.filters) lengths_desc.push_back(f.kernels.size());
  std::sort(lengths_desc.begin(), lengths_desc.end(), std::greater<>());
  lengths_desc.erase(std::unique(lengths_desc.begin(), lengths_desc.end()), lengths_desc.end());

  ReorderPlan plan;
  for (std::size_t len : lengths_desc) {
    std::vector<std::size_t> remaining;
    for (std::size_t f = 0; f < n; ++f)
      if (sorted.filters[f].kernels.size() == len) remaining.push_back(f);
    const std::size_t start = plan.filter_permutation.size();

    // seed: smallest signature, earliest original index on ties
    auto seed_it = std::min_element(remaining.begin(), remaining.end(), [&](std::size_t a, std::size_t b) {
      const auto sa = signature(a), sb = signature(b);
      return sa != sb ? sa < sb : a < b;
    });
    std::size_t last = *seed_it;
    remaining.erase(seed_it);
    plan.filter_permutation.push_back(static_cast<std::uint32_t>(last));
    while (!remaining.empty()) {
      std::size_t best_pos = 0;
      std::size_t best_sim = filter_similarity(sorted.filters[last], sorted.filters[remaining[0]]);
      for (std::size_t i = 1; i < remaining.size(); ++i) {
        const std::size_t sim = filter_similarity(sorted.filters[last], sorted.filters[remaining[i]]);
        if (sim > best_sim) {  // remaining stays in index order, so ties keep the earlier filter
          best_sim = sim;
          best_pos = i;
        }
      }
      last = remaining[best_pos];
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
      plan.filter_permutation.push_back(static_cast<std::uint32_t>(last));
    }
    plan.groups.push_back({start, plan.filter_permutation.size(), len});
  }

  SparseLayer out{sorted.shape, {}, sorted.pattern_set};
  for (auto f : plan.filter_permutation) out.filters.push_back(sorted.filters[f]);
  return {std::move(out), std::move(plan)};
}

FeatureMap apply_inverse_reorder(const FeatureMap& output, const ReorderPlan& plan) {
  if (output.channels != plan.filter_permutation.size()) {
    throw ShapeError("output has " + std::to_string(output.channels) + " channels, plan covers " +
                     std::to_string(plan.filter_permutation.size()));
  }
  plan.validate(output.channels);
  FeatureMap out(output.channels, output.height, output.width);
  const std::size_t plane = output.height * output.width;
  for (std::size_t n = 0; n < output.channels; ++n) {
    std::copy_n(output.data.begin() + static_cast<std::ptrdiff_t>(n * plane), plane,
                out.data.begin() + static_cast<std::ptrdiff_t>(plan.filter_permutation[n] * plane));
  }
  return out;
}

FeatureMap apply_forward_reorder(const FeatureMap& output, const ReorderPlan& plan) {
  if (output.channels != plan.filter_permutation.size()) throw ShapeError("plan length does not match channels");
  plan.validate(output.channels);
  FeatureMap out(output.channels, output.height, output.width);
  const std::size_t plane = output.height * output.width;
  for (std::size_t n = 0; n < output.channels; ++n) {
    std::copy_n(output.data.begin() + static_cast<std::ptrdiff_t>(plan.filter_permutation[n] * plane), plane,
                out.data.begin() + static_cast<std::ptrdiff_t>(n * plane));
  }
  return out;
}

std::string sparse_layer_to_json(const SparseLayer& layer, const ReorderPlan& plan) {
  nlohmann::json j;
  const auto& s = layer.shape;
  j["shape"] = {{"kernel_h", s.kernel_h}, {"kernel_w", s.kernel_w}, {"in_channels", s.in_channels},
                {"out_channels", s.out_channels}, {"stride", s.stride}, {"input_h", s.input_h},
                {"input_w", s.input_w}};
  j["pattern_set"] = nlohmann::json::parse(layer.pattern_set.to_json());
  j["plan"] = nlohmann::json::parse(plan.to_json());
  j["filters"] = nlohmann::json::array();
  for (const auto& f : layer.filters) {
    nlohmann::json kj = nlohmann::json::array();
    for (const auto& k : f.kernels) {
      kj.push_back({{"in_channel", k.in_channel}, {"pattern_id", k.pattern_id},
                    {"weights", std::vector<float>(k.weights.begin(), k.weights.end())}});
    }
    j["filters"].push_back({{"bias", f.bias}, {"kernels", std::move(kj)}});
  }
  return j.dump();
}

std::pair<SparseLayer, ReorderPlan> sparse_layer_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SparseLayer layer;
    const auto& sj = j.at("shape");
    layer.shape = LayerShape{sj.at("kernel_h").get<std::size_t>(), sj.at("kernel_w").get<std::size_t>(),
                             sj.at("in_channels").get<std::size_t>(), sj.at("out_channels").get<std::size_t>(),
                             sj.at("stride").get<std::size_t>(), sj.at("input_h").get<std::size_t>(),
                             sj.at("input_w").get<std::size_t>()};
    layer.pattern_set = PatternSet::from_json(j.at("pattern_set").dump());
    for (const auto& fj : j.at("filters")) {
      SparseFilter f;
      f.bias = fj.at("bias").get<float>();
      for (const auto& kj : fj.at("kernels")) {
        SparseKernel k;
        k.in_channel = kj.at("in_channel").get<std::uint32_t>();
        k.pattern_id = kj.at("pattern_id").get<std::uint32_t>();
        const auto w = kj.at("weights").get<std::vector<float>>();
        if (w.size() != kPatternEntries) throw FormatError("kernel must carry 4 weights");
        std::copy(w.begin(), w.end(), k.weights.begin());
        f.kernels.push_back(k);
      }
      layer.filters.push_back(std::move(f));
    }
    ReorderPlan plan;
    plan.filter_permutation = j.at("plan").at("filter_permutation").get<std::vector<std::uint32_t>>();
    for (const auto& g : j.at("plan").at("groups")) {
      plan.groups.push_back({g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()});
    }
    layer.validate();
    plan.validate(layer.filters.size());
    return {std::move(layer), std::move(plan)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sparse layer JSON: ") + e.what());
  }
}

}  // namespace kpat
