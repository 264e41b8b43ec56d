#include "kpat/fkw.hpp"

#include <algorithm>
#include <string>

#include "json.hpp"

#include "kpat/error.hpp"
#include "kpat/io.hpp"

namespace kpat {

namespace {

std::string at(const char* array, std::size_t pos) { return std::string(array) + "[" + std::to_string(pos) + "]"; }

}  // namespace

void FkwModel::validate() const {
  try {
    shape.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("shape block: ") + e.what());
  }
  if (shape.kernel_h != 3 || shape.kernel_w != 3) throw FormatError("shape block: FKW holds 3x3 kernels only");
  if (pattern_set.empty()) throw FormatError("pattern set block is empty");
  const std::size_t n = shape.out_channels;
  const std::size_t k = pattern_set.size();
  if (offset.size() != n + 1) throw FormatError("offset has " + std::to_string(offset.size()) + " entries, expected " + std::to_string(n + 1));
  if (offset[0] != 0) throw FormatError(at("offset", 0) + " must be 0");
  for (std::size_t i = 1; i <= n; ++i) {
    if (offset[i] < offset[i - 1]) throw FormatError(at("offset", i) + " decreases");
  }
  if (offset[n] != index.size()) throw FormatError(at("offset", n) + " does not equal the index length");
  if (reorder.size() != n) throw FormatError("reorder has " + std::to_string(reorder.size()) + " entries, expected " + std::to_string(n));
  std::vector<bool> seen(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (reorder[i] >= n || seen[reorder[i]]) throw FormatError(at("reorder", i) + " breaks the permutation");
    seen[reorder[i]] = true;
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape.in_channels) throw FormatError(at("index", i) + " is not an input channel");
  }
  if (stride.size() != n) throw FormatError("stride has " + std::to_string(stride.size()) + " filters, expected " + std::to_string(n));
  for (std::size_t f = 0; f < n; ++f) {
    const auto& s = stride[f];
    const std::string name = "stride[" + std::to_string(f) + "]";
    if (s.size() != k + 1) throw FormatError(name + " has " + std::to_string(s.size()) + " entries, expected " + std::to_string(k + 1));
    if (s[0] != 0) throw FormatError(at(name.c_str(), 0) + " must be 0");
    for (std::size_t p = 1; p <= k; ++p) {
      if (s[p] < s[p - 1]) throw FormatError(at(name.c_str(), p) + " decreases");
    }
    if (s[k] != offset[f + 1] - offset[f]) throw FormatError(at(name.c_str(), k) + " does not equal the filter length");
    // kernels of one filter hit distinct input channels
    std::vector<bool> used(shape.in_channels, false);
    for (std::size_t j = offset[f]; j < offset[f + 1]; ++j) {
      if (used[index[j]]) throw FormatError(at("index", j) + " repeats an input channel within filter " + std::to_string(f));
      used[index[j]] = true;
    }
  }
  if (weights.size() != 4 * index.size()) {
    throw FormatError("weights has " + std::to_string(weights.size()) + " values, expected " + std::to_string(4 * index.size()));
  }
  if (bias.size() != n) throw FormatError("bias has " + std::to_string(bias.size()) + " values, expected " + std::to_string(n));
}

FkwModel fkw_encode(const SparseLayer& layer, const ReorderPlan& plan) {
  layer.validate();
  plan.validate(layer.filters.size());
  const std::size_t k = layer.pattern_set.size();
  FkwModel m;
  m.shape = layer.shape;
  m.pattern_set = layer.pattern_set;
  m.reorder = plan.filter_permutation;
  m.offset.push_back(0);
  for (std::size_t f = 0; f < layer.filters.size(); ++f) {
    const auto& kernels = layer.filters[f].kernels;
    std::vector<std::uint32_t> counts(k + 1, 0);
    for (std::size_t j = 0; j < kernels.size(); ++j) {
      if (j > 0 && kernels[j].pattern_id < kernels[j - 1].pattern_id) {
        throw PreconditionError("filter " + std::to_string(f) + " is not ordered by pattern id at kernel " +
                                std::to_string(j) + "; run the filter kernel reorder first");
      }
      ++counts[kernels[j].pattern_id];
      m.index.push_back(kernels[j].in_channel);
      m.weights.insert(m.weights.end(), kernels[j].weights.begin(), kernels[j].weights.end());
    }
    std::vector<std::uint32_t> s(k + 1, 0);
    for (std::size_t p = 1; p <= k; ++p) s[p] = s[p - 1] + counts[p];
    m.stride.push_back(std::move(s));
    m.offset.push_back(static_cast<std::uint32_t>(m.index.size()));
    m.bias.push_back(layer.filters[f].bias);
  }
  return m;
}

std::pair<SparseLayer, ReorderPlan> fkw_decode(const FkwModel& model) {
  model.validate();
  SparseLayer layer{model.shape, {}, model.pattern_set};
  for (std::size_t f = 0; f < model.filters(); ++f) {
    SparseFilter filter;
    filter.bias = model.bias[f];
    const auto& s = model.stride[f];
    for (std::size_t p = 1; p < s.size(); ++p) {
      for (std::size_t j = s[p - 1]; j < s[p]; ++j) {
        const std::size_t g = model.offset[f] + j;
        SparseKernel k;
        k.in_channel = model.index[g];
        k.pattern_id = static_cast<std::uint32_t>(p);
        std::copy_n(model.weights.begin() + static_cast<std::ptrdiff_t>(4 * g), 4, k.weights.begin());
        filter.kernels.push_back(k);
      }
    }
    layer.filters.push_back(std::move(filter));
  }
  ReorderPlan plan;
  plan.filter_permutation = model.reorder;
  plan.groups = length_groups(layer);
  return {std::move(layer), std::move(plan)};
}

std::pair<SparseLayer, ReorderPlan> fkw_decode(const FkwModel& model, const LayerShape& shape) {
  if (!(model.shape == shape)) {
    throw FormatError("shape block " + model.shape.to_string() + " does not match expected " + shape.to_string());
  }
  return fkw_decode(model);
}

FkwModel fkw_from_dense(const WeightTensor& weights, const PatternSet& set) {
  auto [layer, plan] = reorder(sparsify(weights, set));
  return fkw_encode(layer, plan);
}

WeightTensor fkw_to_dense(const FkwModel& model) {
  auto [layer, plan] = fkw_decode(model);
  return to_dense(layer, plan);
}

std::vector<std::uint8_t> fkw_serialize(const FkwModel& model) {
  model.validate();
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>("FKW1"), 4});
  w.u16(kFkwVersion);
  const auto& s = model.shape;
  for (std::size_t v : {s.kernel_h, s.kernel_w, s.in_channels, s.out_channels, s.stride, s.input_h, s.input_w}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(model.pattern_set.size()));
  for (const auto& p : model.pattern_set.patterns()) {
    for (auto c : p.cells()) {
      w.u8(static_cast<std::uint8_t>(Pattern::row(c)));
      w.u8(static_cast<std::uint8_t>(Pattern::col(c)));
    }
  }
  auto put = [&](const std::vector<std::uint32_t>& a) {
    w.u32(static_cast<std::uint32_t>(a.size()));
    for (auto v : a) w.u32(v);
  };
  put(model.offset);
  put(model.reorder);
  put(model.index);
  w.u32(static_cast<std::uint32_t>(model.stride.size()));
  for (const auto& s2 : model.stride) put(s2);
  w.u32(static_cast<std::uint32_t>(model.weights.size()));
  for (float v : model.weights) w.f32(v);
  w.u32(static_cast<std::uint32_t>(model.bias.size()));
  for (float v : model.bias) w.f32(v);
  return w.take();
}

FkwModel fkw_deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FKW1");
  const auto version = r.u16("version");
  if (version != kFkwVersion) throw FormatError("unsupported FKW version " + std::to_string(version));
  FkwModel m;
  m.shape.kernel_h = r.u32("shape.kernel_h");
  m.shape.kernel_w = r.u32("shape.kernel_w");
  m.shape.in_channels = r.u32("shape.in_channels");
  m.shape.out_channels = r.u32("shape.out_channels");
  m.shape.stride = r.u32("shape.stride");
  m.shape.input_h = r.u32("shape.input_h");
  m.shape.input_w = r.u32("shape.input_w");
  const std::uint32_t k = r.u32("pattern count");
  if (k == 0 || k > kPossiblePatterns) throw FormatError("pattern count " + std::to_string(k) + " out of range");
  std::vector<Pattern> patterns;
  for (std::uint32_t i = 0; i < k; ++i) {
    std::vector<std::pair<int, int>> pos;
    for (int e = 0; e < 4; ++e) {
      const int row = r.u8("pattern row");
      const int col = r.u8("pattern col");
      pos.emplace_back(row, col);
    }
    try {
      patterns.push_back(Pattern::from_positions(pos));
    } catch (const ParameterError& e) {
      throw FormatError("pattern[" + std::to_string(i) + "]: " + e.what());
    }
  }
  try {
    m.pattern_set = PatternSet(std::move(patterns));
  } catch (const ParameterError& e) {
    throw FormatError(std::string("pattern set block: ") + e.what());
  }
  auto get = [&](const char* name) {
    const std::uint32_t n = r.u32(name);
    if (static_cast<std::size_t>(n) * 4 > r.remaining()) throw FormatError(std::string(name) + " length exceeds the file");
    std::vector<std::uint32_t> a(n);
    for (auto& v : a) v = r.u32(name);
    return a;
  };
  m.offset = get("offset");
  m.reorder = get("reorder");
  m.index = get("index");
  const std::uint32_t nf = r.u32("stride");
  if (static_cast<std::size_t>(nf) * 4 > r.remaining()) throw FormatError("stride filter count exceeds the file");
  for (std::uint32_t f = 0; f < nf; ++f) m.stride.push_back(get("stride"));
  const std::uint32_t nw = r.u32("weights");
  if (static_cast<std::size_t>(nw) * 4 > r.remaining()) throw FormatError("weights length exceeds the file");
  m.weights.resize(nw);
  for (auto& v : m.weights) v = r.f32("weights");
  const std::uint32_t nb = r.u32("bias");
  if (static_cast<std::size_t>(nb) * 4 > r.remaining()) throw FormatError("bias length exceeds the file");
  m.bias.resize(nb);
  for (auto& v : m.bias) v = r.f32("bias");
  if (r.remaining() != 0) throw FormatError("trailing bytes after bias block");
  m.validate();
  return m;
}

void fkw_save(const std::filesystem::path& path, const FkwModel& model) { write_file_atomic(path, fkw_serialize(model)); }

FkwModel fkw_load(const std::filesystem::path& path) { return fkw_deserialize(read_file(path)); }

std::string fkw_to_json(const FkwModel& model) {
  nlohmann::json j;
  const auto& s = model.shape;
  j["shape"] = {{"kernel_h", s.kernel_h}, {"kernel_w", s.kernel_w}, {"in_channels", s.in_channels},
                {"out_channels", s.out_channels}, {"stride", s.stride}, {"input_h", s.input_h},
                {"input_w", s.input_w}};
  j["pattern_set"] = nlohmann::json::parse(model.pattern_set.to_json());
  j["offset"] = model.offset;
  j["reorder"] = model.reorder;
  j["index"] = model.index;
  j["stride"] = model.stride;
  j["weights"] = model.weights;
  j["bias"] = model.bias;
  return j.dump();
}

void CsrLayer::validate() const {
  if (row_ptr.size() != shape.out_channels + 1 || row_ptr.front() != 0 || row_ptr.back() != col_idx.size() ||
      values.size() != col_idx.size()) {
    throw FormatError("CSR arrays are inconsistent");
  }
  const std::size_t cols = shape.in_channels * shape.kernel_size();
  for (std::size_t r = 0; r + 1 < row_ptr.size(); ++r) {
    if (row_ptr[r + 1] < row_ptr[r]) throw FormatError(at("row_ptr", r + 1) + " decreases");
    for (std::size_t j = row_ptr[r]; j < row_ptr[r + 1]; ++j) {
      if (col_idx[j] >= cols || (j > row_ptr[r] && col_idx[j] <= col_idx[j - 1])) {
        throw FormatError(at("col_idx", j) + " out of range or unsorted");
      }
    }
  }
}

CsrLayer csr_from_sparse(const SparseLayer& layer, const ReorderPlan& plan) {
  layer.validate();
  plan.validate(layer.filters.size());
  const auto inv = plan.inverse();
  CsrLayer csr;
  csr.shape = layer.shape;
  csr.row_ptr.push_back(0);
  for (std::size_t oc = 0; oc < layer.shape.out_channels; ++oc) {
    const auto& filter = layer.filters[inv[oc]];
    std::vector<std::pair<std::uint32_t, float>> row;
    for (const auto& k : filter.kernels) {
      const auto& cells = layer.pattern_set.by_id(k.pattern_id).cells();
      for (std::size_t e = 0; e < kPatternEntries; ++e) {
        row.emplace_back(static_cast<std::uint32_t>(k.in_channel * kPatternCells + cells[e]), k.weights[e]);
      }
    }
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [col, v] : row) {
      csr.col_idx.push_back(col);
      csr.values.push_back(v);
    }
    csr.row_ptr.push_back(static_cast<std::uint32_t>(csr.col_idx.size()));
    csr.bias.push_back(filter.bias);
  }
  return csr;
}

CsrLayer csr_from_dense(const WeightTensor& weights) {
  weights.validate();
  CsrLayer csr;
  csr.shape = weights.shape;
  csr.bias = weights.bias;
  csr.row_ptr.push_back(0);
  const std::size_t cols = weights.shape.in_channels * weights.shape.kernel_size();
  for (std::size_t oc = 0; oc < weights.shape.out_channels; ++oc) {
    for (std::size_t col = 0; col < cols; ++col) {
      const float v = weights.data[oc * cols + col];
      if (v != 0.0f) {
        csr.col_idx.push_back(static_cast<std::uint32_t>(col));
        csr.values.push_back(v);
      }
    }
    csr.row_ptr.push_back(static_cast<std::uint32_t>(csr.col_idx.size()));
  }
  return csr;
}

std::size_t structure_overhead(const FkwModel& model) {
  std::size_t words = model.offset.size() + model.reorder.size() + model.index.size();
  for (const auto& s : model.stride) words += s.size();
  return words * sizeof(std::uint32_t);
}

std::size_t structure_overhead(const CsrLayer& csr) {
  return (csr.row_ptr.size() + csr.col_idx.size()) * sizeof(std::uint32_t);
}

}  // namespace kpat
