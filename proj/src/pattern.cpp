#include "kpat/pattern.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace kpat {

Pattern::Pattern(std::array<std::uint8_t, kPatternEntries> cells) : cells_(cells) {
  std::sort(cells_.begin(), cells_.end());
  for (auto c : cells_) {
    if (c >= kPatternCells) throw ParameterError("pattern cell " + std::to_string(c) + " is outside the 3x3 grid");
    if (mask_ & (1u << c)) throw ParameterError("pattern repeats cell " + std::to_string(c));
    mask_ = static_cast<std::uint16_t>(mask_ | (1u << c));
  }
  if (!(mask_ & (1u << kCenterCell))) throw ParameterError("pattern must keep the center cell");
}

Pattern Pattern::from_positions(std::span<const std::pair<int, int>> positions) {
  if (positions.size() != kPatternEntries) {
    throw ParameterError("pattern needs exactly 4 positions, got " + std::to_string(positions.size()));
  }
  std::array<std::uint8_t, kPatternEntries> cells{};
  for (std::size_t i = 0; i < kPatternEntries; ++i) {
    auto [r, c] = positions[i];
    if (r < 0 || r > 2 || c < 0 || c > 2) {
      throw ParameterError("pattern position (" + std::to_string(r) + "," + std::to_string(c) + ") out of bounds");
    }
    cells[i] = static_cast<std::uint8_t>(r * 3 + c);
  }
  return Pattern(cells);
}

std::string Pattern::to_string() const {
  std::ostringstream os;
  os << "{";
  for (std::size_t i = 0; i < kPatternEntries; ++i) {
    os << (i ? "," : "") << "(" << row(cells_[i]) << "," << col(cells_[i]) << ")";
  }
  os << "}";
  return os.str();
}

const std::vector<Pattern>& all_patterns() {
  static const std::vector<Pattern> patterns = [] {
    std::vector<Pattern> out;
    std::vector<std::uint8_t> others{0, 1, 2, 3, 5, 6, 7, 8};
    for (std::size_t a = 0; a < others.size(); ++a)
      for (std::size_t b = a + 1; b < others.size(); ++b)
        for (std::size_t c = b + 1; c < others.size(); ++c)
          out.emplace_back(std::array<std::uint8_t, kPatternEntries>{others[a], others[b], others[c], kCenterCell});
    std::sort(out.begin(), out.end());
    return out;
  }();
  return patterns;
}

PatternSet::PatternSet(std::vector<Pattern> patterns) : patterns_(std::move(patterns)) {
  if (patterns_.empty() || patterns_.size() > kPossiblePatterns) {
    throw ParameterError("pattern set size must be in [1, 56], got " + std::to_string(patterns_.size()));
  }
  for (std::size_t i = 0; i < patterns_.size(); ++i)
    for (std::size_t j = i + 1; j < patterns_.size(); ++j)
      if (patterns_[i] == patterns_[j]) {
        throw ParameterError("pattern set repeats pattern " + patterns_[i].to_string());
      }
}

const Pattern& PatternSet::by_id(std::size_t id) const {
  if (!valid_id(id)) throw ParameterError("pattern id " + std::to_string(id) + " not in set of " + std::to_string(size()));
  return patterns_[id - 1];
}

std::string PatternSet::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : patterns_) {
    nlohmann::json cells = nlohmann::json::array();
    for (auto c : p.cells()) cells.push_back({Pattern::row(c), Pattern::col(c)});
    arr.push_back(std::move(cells));
  }
  return arr.dump();
}

PatternSet PatternSet::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("pattern set JSON: ") + e.what());
  }
  if (!j.is_array()) throw FormatError("pattern set JSON must be an array");
  std::vector<Pattern> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& pj = j[i];
    if (!pj.is_array() || pj.size() != kPatternEntries) {
      throw FormatError("pattern " + std::to_string(i) + " must list 4 positions");
    }
    std::vector<std::pair<int, int>> pos;
    for (const auto& cj : pj) {
      if (!cj.is_array() || cj.size() != 2 || !cj[0].is_number_integer() || !cj[1].is_number_integer()) {
        throw FormatError("pattern " + std::to_string(i) + " has a malformed position");
      }
      pos.emplace_back(cj[0].get<int>(), cj[1].get<int>());
    }
    try {
      out.push_back(Pattern::from_positions(pos));
    } catch (const ParameterError& e) {
      throw FormatError("pattern " + std::to_string(i) + ": " + e.what());
    }
  }
  return PatternSet(std::move(out));
}

std::size_t ConnectivityMask::kept_count() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

Pattern natural_pattern(std::span<const float> kernel) {
  if (kernel.size() != kPatternCells) {
    throw ParameterError("natural patterns are defined for 3x3 kernels only (got " + std::to_string(kernel.size()) +
                         " cells)");
  }
  std::array<std::uint8_t, 8> others{0, 1, 2, 3, 5, 6, 7, 8};
  // stable_sort keeps lexicographic order among equal magnitudes
  std::stable_sort(others.begin(), others.end(),
                   [&](std::uint8_t a, std::uint8_t b) { return std::abs(kernel[a]) > std::abs(kernel[b]); });
  return Pattern({others[0], others[1], others[2], kCenterCell});
}

PatternSet build_pattern_set(std::span<const WeightTensor> model, std::size_t k) {
  if (k < 1 || k > kPossiblePatterns) throw ParameterError("k must be in [1, 56], got " + std::to_string(k));
  std::map<Pattern, std::size_t> histogram;
  for (const auto& p : all_patterns()) histogram[p] = 0;
  std::size_t kernels = 0;
  for (const auto& layer : model) {
    if (layer.shape.kernel_h != 3 || layer.shape.kernel_w != 3) continue;
    for (std::size_t oc = 0; oc < layer.shape.out_channels; ++oc)
      for (std::size_t ic = 0; ic < layer.shape.in_channels; ++ic) {
        ++histogram[natural_pattern(layer.kernel(oc, ic))];
        ++kernels;
      }
  }
  if (kernels == 0) throw PreconditionError("model has no 3x3 kernels to draw patterns from");
  std::vector<std::pair<Pattern, std::size_t>> ranked(histogram.begin(), histogram.end());
  // map iteration is canonical order, so a stable sort on count settles ties canonically
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<Pattern> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(ranked[i].first);
  return PatternSet(std::move(chosen));
}

std::vector<bool> top_kernels_by_norm(std::span<const double> sq_norms, std::size_t alpha) {
  std::vector<std::size_t> order(sq_norms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sq_norms[a] > sq_norms[b]; });
  std::vector<bool> kept(sq_norms.size(), false);
  for (std::size_t i = 0; i < std::min(alpha, order.size()); ++i) kept[order[i]] = true;
  return kept;
}

ConnectivityMask project_connectivity(const WeightTensor& weights, std::size_t alpha) {
  const auto& s = weights.shape;
  const std::size_t total = s.kernel_count();
  if (alpha < 1 || alpha > total) {
    throw ParameterError("alpha must be in [1, " + std::to_string(total) + "], got " + std::to_string(alpha));
  }
  std::vector<double> norms(total);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc)
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      double acc = 0.0;
      for (float v : weights.kernel(oc, ic)) acc += static_cast<double>(v) * v;
      norms[oc * s.in_channels + ic] = acc;
    }
  ConnectivityMask mask;
  mask.out_channels = s.out_channels;
  mask.in_channels = s.in_channels;
  mask.alpha = alpha;
  mask.kept = top_kernels_by_norm(norms, alpha);
  return mask;
}

std::size_t alpha_for_rate(std::size_t total_kernels, double rate) {
  if (!(rate >= 1.0)) throw ParameterError("pruning rate must be >= 1");
  auto alpha = static_cast<std::size_t>(std::ceil(static_cast<double>(total_kernels) / rate - 1e-9));
  return std::clamp<std::size_t>(alpha, 1, total_kernels);
}

}  // namespace kpat
