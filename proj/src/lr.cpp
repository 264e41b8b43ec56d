#include "kpat/lr.hpp"

#include "json.hpp"

#include "kpat/error.hpp"

namespace kpat {

namespace {

using nlohmann::json;

struct Reader {
  std::vector<Violation>& out;

  void fail(const std::string& path, const std::string& msg) { out.push_back({path, msg}); }

  const json* field(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key)) {
      fail(path + "/" + key, "missing");
      return nullptr;
    }
    return &obj.at(key);
  }

  std::optional<std::size_t> count(const json& obj, const std::string& path, const char* key, std::size_t min = 1) {
    const json* v = field(obj, path, key);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      fail(path + "/" + key, "must be a non-negative integer");
      return std::nullopt;
    }
    const auto n = v->get<std::size_t>();
    if (n < min) {
      fail(path + "/" + key, "must be >= " + std::to_string(min));
      return std::nullopt;
    }
    return n;
  }

  std::optional<std::string> string(const json& obj, const std::string& path, const char* key, bool nonempty = true) {
    const json* v = field(obj, path, key);
    if (!v) return std::nullopt;
    if (!v->is_string() || (nonempty && v->get<std::string>().empty())) {
      fail(path + "/" + key, "must be a non-empty string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<bool> boolean(const json& obj, const std::string& path, const char* key) {
    const json* v = field(obj, path, key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      fail(path + "/" + key, "must be a boolean");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  bool object(const json* v, const std::string& path) {
    if (v && !v->is_object()) fail(path, "must be an object");
    return v && v->is_object();
  }
};

std::optional<LayerRecord> read_layer(Reader& rd, const json& lj, const std::string& path) {
  if (!lj.is_object()) {
    rd.fail(path, "must be an object");
    return std::nullopt;
  }
  const std::size_t before = rd.out.size();
  LayerRecord r;
  if (auto v = rd.string(lj, path, "name")) r.name = *v;
  if (auto v = rd.string(lj, path, "device")) r.device = *v;
  if (auto v = rd.string(lj, path, "fkw_file")) r.fkw_file = *v;
  if (auto v = rd.boolean(lj, path, "relu")) r.relu = *v;
  if (auto v = rd.boolean(lj, path, "lre")) r.config.lre_enabled = *v;
  if (auto v = rd.boolean(lj, path, "reorder")) r.config.reorder_enabled = *v;
  if (auto v = rd.string(lj, path, "loop_permutation")) {
    try {
      r.config.order = parse_loop_order(*v);
    } catch (const ParameterError& e) {
      rd.fail(path + "/loop_permutation", e.what());
    }
  }
  if (const json* pj = rd.field(lj, path, "patterns")) {
    if (!pj->is_array()) {
      rd.fail(path + "/patterns", "must be an array");
    } else {
      for (std::size_t i = 0; i < pj->size(); ++i) {
        const auto& e = (*pj)[i];
        if (!e.is_number_integer() || e.get<long long>() < 1) {
          rd.fail(path + "/patterns/" + std::to_string(i), "must be a pattern id >= 1");
        } else {
          r.patterns.push_back(e.get<std::size_t>());
        }
      }
    }
  }
  const json* tj = rd.field(lj, path, "tile");
  if (rd.object(tj, path + "/tile")) {
    const std::string tp = path + "/tile";
    if (auto v = rd.count(*tj, tp, "h")) r.config.tile_h = *v;
    if (auto v = rd.count(*tj, tp, "w")) r.config.tile_w = *v;
    if (auto v = rd.count(*tj, tp, "oc")) r.config.tile_oc = *v;
    if (auto v = rd.count(*tj, tp, "ic")) r.config.tile_ic = *v;
  }
  const json* uj = rd.field(lj, path, "unroll");
  if (rd.object(uj, path + "/unroll")) {
    const std::string up = path + "/unroll";
    if (auto v = rd.count(*uj, up, "oc")) r.config.unroll_oc = *v;
    if (auto v = rd.count(*uj, up, "iw")) r.config.unroll_iw = *v;
  }
  const json* sj = rd.field(lj, path, "shape");
  if (rd.object(sj, path + "/shape")) {
    const std::string sp = path + "/shape";
    if (auto v = rd.count(*sj, sp, "kernel_h")) r.shape.kernel_h = *v;
    if (auto v = rd.count(*sj, sp, "kernel_w")) r.shape.kernel_w = *v;
    if (auto v = rd.count(*sj, sp, "in_channels")) r.shape.in_channels = *v;
    if (auto v = rd.count(*sj, sp, "out_channels")) r.shape.out_channels = *v;
    if (auto v = rd.count(*sj, sp, "stride")) r.shape.stride = *v;
    if (auto v = rd.count(*sj, sp, "input_h")) r.shape.input_h = *v;
    if (auto v = rd.count(*sj, sp, "input_w")) r.shape.input_w = *v;
  }
  if (rd.out.size() != before) return std::nullopt;
  return r;
}

json layer_to_json(const LayerRecord& r) {
  json j;
  j["name"] = r.name;
  j["device"] = r.device;
  j["patterns"] = r.patterns;
  j["fkw_file"] = r.fkw_file;
  j["loop_permutation"] = std::string(loop_order_name(r.config.order));
  j["tile"] = {{"h", r.config.tile_h}, {"w", r.config.tile_w}, {"oc", r.config.tile_oc}, {"ic", r.config.tile_ic}};
  j["unroll"] = {{"oc", r.config.unroll_oc}, {"iw", r.config.unroll_iw}};
  j["lre"] = r.config.lre_enabled;
  j["reorder"] = r.config.reorder_enabled;
  j["relu"] = r.relu;
  j["shape"] = {{"kernel_h", r.shape.kernel_h},       {"kernel_w", r.shape.kernel_w},
                {"in_channels", r.shape.in_channels}, {"out_channels", r.shape.out_channels},
                {"stride", r.shape.stride},           {"input_h", r.shape.input_h},
                {"input_w", r.shape.input_w}};
  return j;
}

}  // namespace

namespace {

// Semantic checks; `pos[i]` is the position of m.layers[i] in the source
// document (layers that failed to parse are absent). Chaining is only checked
// between layers adjacent in the document.
void validate_into(const ModelManifest& m, const std::vector<std::size_t>& pos, std::vector<Violation>& v) {
  if (m.version != kManifestVersion) v.push_back({"/version", "unsupported version " + std::to_string(m.version)});
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& r = m.layers[i];
    const std::string p = "/layers/" + std::to_string(pos[i]);
    for (std::size_t j = 0; j < r.patterns.size(); ++j) {
      if (!m.pattern_set.valid_id(r.patterns[j])) {
        v.push_back({p + "/patterns/" + std::to_string(j),
                     "pattern id " + std::to_string(r.patterns[j]) + " is not in the pattern set (size " +
                         std::to_string(m.pattern_set.size()) + ")"});
      }
    }
    try {
      r.shape.validate();
    } catch (const Error& e) {
      v.push_back({p + "/shape", e.what()});
      continue;
    }
    if (r.shape.kernel_h != 3 || r.shape.kernel_w != 3) v.push_back({p + "/shape", "only 3x3 kernels are supported"});
    const auto& c = r.config;
    if (c.tile_h > r.shape.out_h()) v.push_back({p + "/tile/h", "exceeds output height"});
    if (c.tile_w > r.shape.out_w()) v.push_back({p + "/tile/w", "exceeds output width"});
    if (c.tile_oc > r.shape.out_channels) v.push_back({p + "/tile/oc", "exceeds output channels"});
    if (c.tile_ic > r.shape.in_channels) v.push_back({p + "/tile/ic", "exceeds input channels"});
    if (c.unroll_oc > c.tile_oc) v.push_back({p + "/unroll/oc", "exceeds tile oc"});
    if (c.unroll_iw > c.tile_w) v.push_back({p + "/unroll/iw", "exceeds tile w"});
    if (i > 0 && pos[i - 1] + 1 == pos[i] && m.layers[i - 1].shape.out_channels != r.shape.in_channels) {
      v.push_back({p + "/shape/in_channels", "does not match out_channels of the previous layer"});
    }
  }
}

}  // namespace

std::vector<Violation> lr_validate(const ModelManifest& m) {
  std::vector<Violation> v;
  if (m.pattern_set.size() == 0) v.push_back({"/pattern_set", "must contain at least one pattern"});
  if (m.layers.empty()) v.push_back({"/layers", "must contain at least one layer"});
  std::vector<std::size_t> pos(m.layers.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  validate_into(m, pos, v);
  return v;
}

ManifestParse lr_parse(const std::string& text) {
  ManifestParse res;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    res.violations.push_back({"", std::string("malformed JSON: ") + e.what()});
    return res;
  }
  if (!j.is_object()) {
    res.violations.push_back({"", "manifest must be an object"});
    return res;
  }
  Reader rd{res.violations};
  ModelManifest m;
  std::vector<std::size_t> pos;
  bool layers_ok = false, set_ok = false;
  if (const json* v = rd.field(j, "", "version")) {
    if (!v->is_number_integer()) {
      rd.fail("/version", "must be an integer");
    } else {
      m.version = v->get<int>();
    }
  }
  if (const json* v = rd.field(j, "", "pattern_set")) {
    try {
      m.pattern_set = PatternSet::from_json(v->dump());
      set_ok = true;
    } catch (const Error& e) {
      rd.fail("/pattern_set", e.what());
    }
  }
  if (const json* v = rd.field(j, "", "layers")) {
    if (!v->is_array()) {
      rd.fail("/layers", "must be an array");
    } else {
      layers_ok = true;
      if (v->empty()) rd.fail("/layers", "must contain at least one layer");
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (auto r = read_layer(rd, (*v)[i], "/layers/" + std::to_string(i))) {
          m.layers.push_back(std::move(*r));
          pos.push_back(i);
        }
      }
    }
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "version" && it.key() != "pattern_set" && it.key() != "layers") {
      rd.fail("/" + it.key(), "unknown field");
    }
  }
  // Pattern ids can only be checked against a set that parsed.
  if (!set_ok) m.pattern_set = PatternSet(all_patterns());
  if (layers_ok) validate_into(m, pos, res.violations);
  if (res.violations.empty()) res.manifest = std::move(m);
  return res;
}

ModelManifest lr_parse_or_throw(const std::string& text) {
  auto r = lr_parse(text);
  if (r.ok()) return std::move(*r.manifest);
  std::string msg = "manifest has " + std::to_string(r.violations.size()) + " violation(s):";
  for (const auto& v : r.violations) msg += " " + (v.path.empty() ? std::string("/") : v.path) + ": " + v.message + ";";
  throw FormatError(msg);
}

std::string lr_emit(const ModelManifest& m) {
  json j;
  j["version"] = m.version;
  j["pattern_set"] = json::parse(m.pattern_set.to_json());
  j["layers"] = json::array();
  for (const auto& r : m.layers) j["layers"].push_back(layer_to_json(r));
  return j.dump() + "\n";
}

}  // namespace kpat
