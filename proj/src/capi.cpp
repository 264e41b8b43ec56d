#include "kpat/kpat.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <random>
#include <set>
#include <string>

#include "json.hpp"

#include "kpat/admm.hpp"
#include "kpat/bench.hpp"
#include "kpat/error.hpp"
#include "kpat/executor.hpp"
#include "kpat/fkw.hpp"
#include "kpat/io.hpp"
#include "kpat/lr.hpp"
#include "kpat/tuner.hpp"

struct kpat_pattern_set {
  kpat::PatternSet set;
};
struct kpat_network {
  kpat::TinyNet net;
};
struct kpat_fkw {
  kpat::FkwModel model;
};
struct kpat_feature {
  kpat::FeatureMap map;
};
struct kpat_manifest {
  kpat::ModelManifest m;
};

namespace {

thread_local std::string g_last_error;

kpat_status fail(kpat_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
kpat_status guarded(F&& fn) {
  try {
    fn();
    return KPAT_OK;
  } catch (const kpat::Error& e) {
    return fail(static_cast<kpat_status>(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(KPAT_ERR_VALIDATION, std::string("JSON error: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(KPAT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(KPAT_ERR_INTERNAL, e.what());
  }
}

char* dup(const std::string& s) {
  char* p = new char[s.size() + 1];
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

template <typename T>
void need(const T* p, const char* what) {
  if (!p) throw kpat::ParameterError(std::string(what) + " is NULL");
}

kpat_layer_shape to_c(const kpat::LayerShape& s) {
  return {s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride, s.input_h, s.input_w};
}

kpat::ExecConfig parse_config(const char* json) {
  return json ? kpat::ExecConfig::from_json(json) : kpat::ExecConfig{};
}

kpat::Dataset toy_train(std::uint64_t seed) { return kpat::make_blob_dataset(512, seed); }
kpat::Dataset toy_test(std::uint64_t seed) { return kpat::make_blob_dataset(512, seed + 1000); }

std::string stats_text(const kpat::LoadStats& s, std::uint64_t ns) { return kpat::stats_to_json(s, ns); }

std::vector<std::size_t> present_ids(const kpat::FkwModel& m) {
  std::set<std::size_t> ids;
  for (const auto& st : m.stride)
    for (std::size_t id = 1; id < st.size(); ++id)
      if (st[id] > st[id - 1]) ids.insert(id);
  return {ids.begin(), ids.end()};
}

kpat::FkwModel load_layer(const kpat::ModelManifest& m, std::size_t i, const char* base_dir) {
  const auto& rec = m.layers[i];
  std::filesystem::path p(rec.fkw_file);
  if (p.is_relative() && base_dir) p = std::filesystem::path(base_dir) / p;
  kpat::FkwModel model = kpat::fkw_load(p);
  if (!(model.shape == rec.shape)) {
    throw kpat::ShapeError("layer " + rec.name + ": " + p.string() + " has shape " + model.shape.to_string() +
                           ", manifest says " + rec.shape.to_string());
  }
  if (model.pattern_set.patterns() != m.pattern_set.patterns()) {
    throw kpat::FormatError("layer " + rec.name + ": " + p.string() + " uses a different pattern set");
  }
  return model;
}

}  // namespace

extern "C" {

const char* kpat_last_error(void) { return g_last_error.c_str(); }
const char* kpat_version(void) { return "0.1.0"; }
void kpat_string_free(char* s) { delete[] s; }

kpat_status kpat_pattern_set_all(kpat_pattern_set** out) {
  return guarded([&] {
    need(out, "out");
    *out = new kpat_pattern_set{kpat::PatternSet(kpat::all_patterns())};
  });
}

kpat_status kpat_pattern_set_from_network(const kpat_network* net, size_t k, kpat_pattern_set** out) {
  return guarded([&] {
    need(net, "net");
    need(out, "out");
    const auto tensors = net->net.conv_tensors();
    *out = new kpat_pattern_set{kpat::build_pattern_set(tensors, k)};
  });
}

kpat_status kpat_pattern_set_from_json(const char* json, kpat_pattern_set** out) {
  return guarded([&] {
    need(json, "json");
    need(out, "out");
    *out = new kpat_pattern_set{kpat::PatternSet::from_json(json)};
  });
}

kpat_status kpat_pattern_set_to_json(const kpat_pattern_set* set, char** out) {
  return guarded([&] {
    need(set, "set");
    need(out, "out");
    *out = dup(set->set.to_json());
  });
}

size_t kpat_pattern_set_size(const kpat_pattern_set* set) { return set ? set->set.size() : 0; }
void kpat_pattern_set_free(kpat_pattern_set* set) { delete set; }

kpat_status kpat_network_toy(uint64_t seed, kpat_network** out) {
  return guarded([&] {
    need(out, "out");
    *out = new kpat_network{kpat::make_toy_net(seed)};
  });
}

kpat_status kpat_network_train_toy(kpat_network* net, uint64_t seed, size_t epochs, double learning_rate,
                                   double* accuracy) {
  return guarded([&] {
    need(net, "net");
    kpat::train(net->net, toy_train(seed), kpat::TrainOptions{epochs, 32, learning_rate, seed});
    if (accuracy) *accuracy = net->net.accuracy(toy_test(seed));
  });
}

kpat_status kpat_network_accuracy(const kpat_network* net, uint64_t seed, double* accuracy) {
  return guarded([&] {
    need(net, "net");
    need(accuracy, "accuracy");
    *accuracy = net->net.accuracy(toy_test(seed));
  });
}

kpat_status kpat_network_load(const char* path, kpat_network** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new kpat_network{kpat::TinyNet::load(path)};
  });
}

kpat_status kpat_network_save(const kpat_network* net, const char* path) {
  return guarded([&] {
    need(net, "net");
    need(path, "path");
    net->net.save(path);
  });
}

size_t kpat_network_conv_count(const kpat_network* net) { return net ? net->net.convs().size() : 0; }

kpat_status kpat_network_layer_shape(const kpat_network* net, size_t layer, kpat_layer_shape* out) {
  return guarded([&] {
    need(net, "net");
    need(out, "out");
    if (layer >= net->net.convs().size()) throw kpat::ParameterError("layer " + std::to_string(layer) + " out of range");
    *out = to_c(net->net.convs()[layer].shape);
  });
}

kpat_status kpat_network_sample_input(const kpat_network* net, uint64_t seed, kpat_feature** out) {
  return guarded([&] {
    need(net, "net");
    need(out, "out");
    const auto data = kpat::make_blob_dataset(1, seed);
    kpat::FeatureMap map(data.channels, data.height, data.width);
    for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] = static_cast<float>(data.samples[0].image[i]);
    *out = new kpat_feature{std::move(map)};
  });
}

void kpat_network_free(kpat_network* net) { delete net; }

void kpat_prune_options_default(kpat_prune_options* opt) {
  if (!opt) return;
  const kpat::PruneConfig d = kpat::default_toy_options().prune;
  *opt = {d.connectivity_rate, d.first_layer_rate, d.admm_iterations, d.epochs_per_iteration, d.finetune_epochs,
          d.batch_size,        d.learning_rate,    d.rho,             d.seed,                 d.freeze_patterns ? 1 : 0};
}

kpat_status kpat_prune(const kpat_network* net, const kpat_pattern_set* set, const kpat_prune_options* opt,
                       kpat_network** pruned, double* accuracy, char** assignments_json, char** trace_csv) {
  return guarded([&] {
    need(net, "net");
    need(set, "set");
    need(opt, "opt");
    need(pruned, "pruned");
    kpat::PruneConfig cfg;
    cfg.pattern_set = set->set;
    cfg.connectivity_rate = opt->connectivity_rate;
    cfg.first_layer_rate = opt->first_layer_rate;
    cfg.admm_iterations = opt->admm_iterations;
    cfg.epochs_per_iteration = opt->epochs_per_iteration;
    cfg.finetune_epochs = opt->finetune_epochs;
    cfg.batch_size = opt->batch_size;
    cfg.learning_rate = opt->learning_rate;
    cfg.rho = opt->rho;
    cfg.seed = opt->seed;
    cfg.freeze_patterns = opt->freeze_patterns != 0;
    auto res = kpat::prune(net->net, toy_train(opt->seed), cfg);
    if (accuracy) *accuracy = res.net.accuracy(toy_test(opt->seed));
    set_out(assignments_json, kpat::assignments_to_json(res.layers));
    set_out(trace_csv, kpat::trace_to_csv(res.trace));
    *pruned = new kpat_network{std::move(res.net)};
  });
}

kpat_status kpat_network_check_feasible(const kpat_network* net, const kpat_pattern_set* set,
                                        double connectivity_rate, double first_layer_rate) {
  return guarded([&] {
    need(net, "net");
    need(set, "set");
    kpat::PruneConfig cfg;
    cfg.pattern_set = set->set;
    cfg.connectivity_rate = connectivity_rate;
    cfg.first_layer_rate = first_layer_rate;
    const auto alphas = kpat::layer_alphas(net->net, cfg);
    const auto v = kpat::feasibility_violations(net->net, set->set, alphas);
    if (!v.empty()) {
      std::string msg = std::to_string(v.size()) + " constraint violation(s):";
      for (const auto& s : v) msg += " " + s + ";";
      throw kpat::PreconditionError(msg);
    }
  });
}

kpat_status kpat_reorder_layer(const kpat_network* net, size_t layer, const kpat_pattern_set* set,
                               char** sparse_json) {
  return guarded([&] {
    need(net, "net");
    need(set, "set");
    need(sparse_json, "sparse_json");
    const auto tensors = net->net.conv_tensors();
    if (layer >= tensors.size()) throw kpat::ParameterError("layer " + std::to_string(layer) + " out of range");
    const auto [sorted, plan] = kpat::reorder(kpat::sparsify(tensors[layer], set->set));
    *sparse_json = dup(kpat::sparse_layer_to_json(sorted, plan));
  });
}

kpat_status kpat_fkw_from_sparse_json(const char* sparse_json, kpat_fkw** out) {
  return guarded([&] {
    need(sparse_json, "sparse_json");
    need(out, "out");
    const auto [layer, plan] = kpat::sparse_layer_from_json(sparse_json);
    *out = new kpat_fkw{kpat::fkw_encode(layer, plan)};
  });
}

kpat_status kpat_fkw_from_network(const kpat_network* net, size_t layer, const kpat_pattern_set* set,
                                  kpat_fkw** out) {
  return guarded([&] {
    need(net, "net");
    need(set, "set");
    need(out, "out");
    const auto tensors = net->net.conv_tensors();
    if (layer >= tensors.size()) throw kpat::ParameterError("layer " + std::to_string(layer) + " out of range");
    *out = new kpat_fkw{kpat::fkw_from_dense(tensors[layer], set->set)};
  });
}

kpat_status kpat_fkw_load(const char* path, kpat_fkw** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new kpat_fkw{kpat::fkw_load(path)};
  });
}

kpat_status kpat_fkw_save(const kpat_fkw* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    kpat::fkw_save(path, model->model);
  });
}

kpat_status kpat_fkw_to_json(const kpat_fkw* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = dup(kpat::fkw_to_json(model->model));
  });
}

kpat_status kpat_fkw_to_sparse_json(const kpat_fkw* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    const auto [layer, plan] = kpat::fkw_decode(model->model);
    *out = dup(kpat::sparse_layer_to_json(layer, plan));
  });
}

kpat_status kpat_fkw_save_dense(const kpat_fkw* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    kpat::save_weights(path, kpat::fkw_to_dense(model->model));
  });
}

kpat_status kpat_fkw_shape(const kpat_fkw* model, kpat_layer_shape* out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = to_c(model->model.shape);
  });
}

size_t kpat_fkw_kernel_count(const kpat_fkw* model) { return model ? model->model.kernels() : 0; }

kpat_status kpat_fkw_pattern_ids(const kpat_fkw* model, char** ids_json) {
  return guarded([&] {
    need(model, "model");
    need(ids_json, "ids_json");
    *ids_json = dup(nlohmann::json(present_ids(model->model)).dump());
  });
}

kpat_status kpat_fkw_structure_bytes(const kpat_fkw* model, size_t* fkw_bytes, size_t* csr_bytes) {
  return guarded([&] {
    need(model, "model");
    if (fkw_bytes) *fkw_bytes = kpat::structure_overhead(model->model);
    if (csr_bytes) {
      const auto [layer, plan] = kpat::fkw_decode(model->model);
      *csr_bytes = kpat::structure_overhead(kpat::csr_from_sparse(layer, plan));
    }
  });
}

void kpat_fkw_free(kpat_fkw* model) { delete model; }

kpat_status kpat_feature_random(size_t channels, size_t height, size_t width, uint64_t seed, kpat_feature** out) {
  return guarded([&] {
    need(out, "out");
    if (channels == 0 || height == 0 || width == 0) throw kpat::ShapeError("feature dims must be >= 1");
    std::mt19937_64 rng(seed);
    kpat::FeatureMap map(channels, height, width);
    for (auto& v : map.data) v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1p-52 - 1.0);
    *out = new kpat_feature{std::move(map)};
  });
}

kpat_status kpat_feature_load(const char* path, kpat_feature** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new kpat_feature{kpat::load_feature(path)};
  });
}

kpat_status kpat_feature_save(const kpat_feature* map, const char* path) {
  return guarded([&] {
    need(map, "map");
    need(path, "path");
    kpat::save_feature(path, map->map);
  });
}

void kpat_feature_dims(const kpat_feature* map, size_t* channels, size_t* height, size_t* width) {
  if (channels) *channels = map ? map->map.channels : 0;
  if (height) *height = map ? map->map.height : 0;
  if (width) *width = map ? map->map.width : 0;
}

kpat_status kpat_feature_max_rel_error(const kpat_feature* a, const kpat_feature* b, double* out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    if (a->map.channels != b->map.channels || a->map.height != b->map.height || a->map.width != b->map.width) {
      throw kpat::ShapeError("feature maps differ in shape");
    }
    *out = kpat::max_rel_error(a->map.data, b->map.data);
  });
}

void kpat_feature_free(kpat_feature* map) { delete map; }

kpat_status kpat_run(const kpat_fkw* model, const kpat_feature* input, const char* config_json, size_t threads,
                     int relu, kpat_feature** out, char** stats_json) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(out, "out");
    auto res = kpat::conv_fkw(input->map, model->model, parse_config(config_json), threads);
    if (relu) kpat::relu_inplace(res.output);
    set_out(stats_json, stats_text(res.stats, res.wall_time_ns));
    *out = new kpat_feature{std::move(res.output)};
  });
}

kpat_status kpat_run_dense(const kpat_fkw* model, const kpat_feature* input, int relu, kpat_feature** out) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(out, "out");
    auto y = kpat::conv_dense(input->map, kpat::fkw_to_dense(model->model));
    if (relu) kpat::relu_inplace(y);
    *out = new kpat_feature{std::move(y)};
  });
}

kpat_status kpat_default_config(const kpat_fkw* model, char** config_json) {
  return guarded([&] {
    need(model, "model");
    need(config_json, "config_json");
    *config_json = dup(kpat::ExecConfig{}.normalized(model->model.shape).to_json());
  });
}

kpat_status kpat_tune(const kpat_fkw* model, const kpat_feature* input, size_t budget, uint64_t seed,
                      char** best_config_json, char** history_csv) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    kpat::TuneOptions opt;
    opt.budget = budget;
    opt.seed = seed;
    const auto res = kpat::tune(model->model, input->map, opt);
    set_out(best_config_json, res.best.to_json());
    set_out(history_csv, kpat::history_to_csv(res.history));
  });
}

kpat_status kpat_manifest_parse(const char* text, kpat_manifest** out, char** violations_json) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    auto r = kpat::lr_parse(text);
    if (!r.ok()) {
      nlohmann::json v = nlohmann::json::array();
      for (const auto& x : r.violations) v.push_back({{"path", x.path}, {"message", x.message}});
      set_out(violations_json, v.dump());
      std::string msg = "manifest has " + std::to_string(r.violations.size()) + " violation(s)";
      for (const auto& x : r.violations) msg += "; " + (x.path.empty() ? std::string("/") : x.path) + ": " + x.message;
      throw kpat::FormatError(msg);
    }
    *out = new kpat_manifest{std::move(*r.manifest)};
  });
}

kpat_status kpat_manifest_new(const kpat_pattern_set* set, kpat_manifest** out) {
  return guarded([&] {
    need(set, "set");
    need(out, "out");
    auto* m = new kpat_manifest;
    m->m.pattern_set = set->set;
    *out = m;
  });
}

kpat_status kpat_manifest_add_layer(kpat_manifest* m, const char* name, const char* fkw_file, const kpat_fkw* model,
                                    const char* config_json, int relu) {
  return guarded([&] {
    need(m, "manifest");
    need(name, "name");
    need(fkw_file, "fkw_file");
    need(model, "model");
    if (model->model.pattern_set.patterns() != m->m.pattern_set.patterns()) {
      throw kpat::PreconditionError("layer " + std::string(name) + " uses a different pattern set");
    }
    kpat::LayerRecord r;
    r.name = name;
    r.fkw_file = fkw_file;
    r.patterns = present_ids(model->model);
    r.config = parse_config(config_json).normalized(model->model.shape);
    r.relu = relu != 0;
    r.shape = model->model.shape;
    m->m.layers.push_back(std::move(r));
  });
}

kpat_status kpat_manifest_emit(const kpat_manifest* m, char** out) {
  return guarded([&] {
    need(m, "manifest");
    need(out, "out");
    const auto v = kpat::lr_validate(m->m);
    if (!v.empty()) throw kpat::PreconditionError("manifest is invalid at " + v.front().path + ": " + v.front().message);
    *out = dup(kpat::lr_emit(m->m));
  });
}

size_t kpat_manifest_layer_count(const kpat_manifest* m) { return m ? m->m.layers.size() : 0; }

kpat_status kpat_manifest_layer(const kpat_manifest* m, size_t i, char** name, char** fkw_file, char** config_json) {
  return guarded([&] {
    need(m, "manifest");
    if (i >= m->m.layers.size()) throw kpat::ParameterError("layer " + std::to_string(i) + " out of range");
    const auto& r = m->m.layers[i];
    set_out(name, r.name);
    set_out(fkw_file, r.fkw_file);
    set_out(config_json, r.config.to_json());
  });
}

kpat_status kpat_manifest_set_config(kpat_manifest* m, size_t i, const char* config_json) {
  return guarded([&] {
    need(m, "manifest");
    need(config_json, "config_json");
    if (i >= m->m.layers.size()) throw kpat::ParameterError("layer " + std::to_string(i) + " out of range");
    auto& r = m->m.layers[i];
    r.config = kpat::ExecConfig::from_json(config_json).normalized(r.shape);
  });
}

kpat_status kpat_manifest_run(const kpat_manifest* m, const char* base_dir, const kpat_feature* input,
                              size_t threads, kpat_feature** out, char** stats_json) {
  return guarded([&] {
    need(m, "manifest");
    need(input, "input");
    need(out, "out");
    kpat::FeatureMap x = input->map;
    kpat::LoadStats total;
    std::uint64_t ns = 0;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < m->m.layers.size(); ++i) {
      const auto model = load_layer(m->m, i, base_dir);
      auto res = kpat::conv_fkw(x, model, m->m.layers[i].config, threads);
      if (m->m.layers[i].relu) kpat::relu_inplace(res.output);
      total += res.stats;
      ns += res.wall_time_ns;
      auto lj = nlohmann::json::parse(stats_text(res.stats, res.wall_time_ns));
      lj["name"] = m->m.layers[i].name;
      layers.push_back(lj);
      x = std::move(res.output);
    }
    auto j = nlohmann::json::parse(stats_text(total, ns));
    j["layers"] = layers;
    set_out(stats_json, j.dump());
    *out = new kpat_feature{std::move(x)};
  });
}

kpat_status kpat_manifest_run_dense(const kpat_manifest* m, const char* base_dir, const kpat_feature* input,
                                    kpat_feature** out) {
  return guarded([&] {
    need(m, "manifest");
    need(input, "input");
    need(out, "out");
    kpat::FeatureMap x = input->map;
    for (std::size_t i = 0; i < m->m.layers.size(); ++i) {
      x = kpat::conv_dense(x, kpat::fkw_to_dense(load_layer(m->m, i, base_dir)));
      if (m->m.layers[i].relu) kpat::relu_inplace(x);
    }
    *out = new kpat_feature{std::move(x)};
  });
}

void kpat_manifest_free(kpat_manifest* m) { delete m; }

kpat_status kpat_bench(const char* options_json, char** report_json, char** report_markdown) {
  return guarded([&] {
    kpat::BenchOptions opt;
    if (options_json) {
      const auto j = nlohmann::json::parse(options_json);
      auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
      };
      get("in_channels", opt.shape.in_channels);
      get("out_channels", opt.shape.out_channels);
      get("input_h", opt.shape.input_h);
      get("input_w", opt.shape.input_w);
      get("stride", opt.shape.stride);
      get("k", opt.k);
      get("rate", opt.rate);
      get("seed", opt.seed);
      get("repeats", opt.repeats);
      get("tune_budget", opt.tune_budget);
      get("threads", opt.threads);
      get("pattern_counts", opt.pattern_counts);
    }
    const auto r = kpat::run_bench(opt);
    set_out(report_json, kpat::bench_to_json(r));
    set_out(report_markdown, kpat::bench_to_markdown(r));
  });
}

}  // extern "C"
