// kpat command-line front end. Talks to the library only through kpat.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpat/kpat.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  kpat_status status;
  std::string message;
};

void check(kpat_status s) {
  if (s != KPAT_OK) throw Failure{s, kpat_last_error()};
}

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{KPAT_ERR_VALIDATION, msg}; }

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using PatternSet = std::unique_ptr<kpat_pattern_set, Deleter<kpat_pattern_set, kpat_pattern_set_free>>;
using Network = std::unique_ptr<kpat_network, Deleter<kpat_network, kpat_network_free>>;
using Fkw = std::unique_ptr<kpat_fkw, Deleter<kpat_fkw, kpat_fkw_free>>;
using Feature = std::unique_ptr<kpat_feature, Deleter<kpat_feature, kpat_feature_free>>;
using Manifest = std::unique_ptr<kpat_manifest, Deleter<kpat_manifest, kpat_manifest_free>>;

// Takes ownership of a library string.
std::string take(char* s) {
  if (!s) return {};
  std::string out(s);
  kpat_string_free(s);
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Failure{KPAT_ERR_IO, "cannot open " + p.string()};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure{KPAT_ERR_IO, "cannot write " + p.string()};
    out << text;
    if (!out) throw Failure{KPAT_ERR_IO, "write failed for " + p.string()};
  }
  fs::rename(tmp, p);
}

struct Globals {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string out_dir = ".";

  // Explicit paths are taken as given; defaults land in the output directory.
  fs::path output(const std::string& given, const std::string& fallback) const {
    return given.empty() ? fs::path(out_dir) / fallback : fs::path(given);
  }
};

PatternSet load_patterns(const std::string& path) {
  kpat_pattern_set* p = nullptr;
  check(kpat_pattern_set_from_json(read_text(path).c_str(), &p));
  return PatternSet(p);
}

Network load_network(const std::string& path) {
  kpat_network* n = nullptr;
  check(kpat_network_load(path.c_str(), &n));
  return Network(n);
}

Fkw load_fkw(const std::string& path) {
  kpat_fkw* m = nullptr;
  check(kpat_fkw_load(path.c_str(), &m));
  return Fkw(m);
}

Manifest load_manifest(const std::string& path) {
  kpat_manifest* m = nullptr;
  char* v = nullptr;
  const kpat_status s = kpat_manifest_parse(read_text(path).c_str(), &m, &v);
  const std::string violations = take(v);
  if (s != KPAT_OK) {
    Failure f{s, kpat_last_error()};
    if (!violations.empty()) f.message = path + ": " + f.message;
    throw f;
  }
  return Manifest(m);
}

Feature load_feature(const std::string& path) {
  kpat_feature* f = nullptr;
  check(kpat_feature_load(path.c_str(), &f));
  return Feature(f);
}

// Input from a file, or a seeded random map written next to the outputs.
Feature input_for(const Globals& g, const std::string& path, std::size_t c, std::size_t h, std::size_t w) {
  if (!path.empty()) return load_feature(path);
  kpat_feature* f = nullptr;
  check(kpat_feature_random(c, h, w, g.seed, &f));
  Feature out(f);
  fs::create_directories(g.out_dir);
  check(kpat_feature_save(out.get(), (fs::path(g.out_dir) / "input.ptk").string().c_str()));
  return out;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

std::string manifest_base(const std::string& path) {
  const fs::path p(path);
  return p.has_parent_path() ? p.parent_path().string() : std::string(".");
}

// --- subcommands -----------------------------------------------------------

struct GenPatternsArgs {
  std::size_t k = 8;
  std::string model;
  std::size_t epochs = 30;
  double lr = 5e-3;
  std::string out;
};

void gen_patterns(const Globals& g, const GenPatternsArgs& a) {
  Network net;
  json report;
  if (a.model.empty()) {
    kpat_network* n = nullptr;
    check(kpat_network_toy(g.seed, &n));
    net.reset(n);
    double acc = 0;
    check(kpat_network_train_toy(net.get(), g.seed, a.epochs, a.lr, &acc));
    const fs::path dense = fs::path(g.out_dir) / "dense.ptk";
    fs::create_directories(g.out_dir);
    check(kpat_network_save(net.get(), dense.string().c_str()));
    report["dense_model"] = dense.string();
    report["dense_accuracy"] = acc;
  } else {
    net = load_network(a.model);
  }
  kpat_pattern_set* p = nullptr;
  check(kpat_pattern_set_from_network(net.get(), a.k, &p));
  PatternSet set(p);
  char* text = nullptr;
  check(kpat_pattern_set_to_json(set.get(), &text));
  const fs::path out = g.output(a.out, "patterns.json");
  write_text(out, take(text) + "\n");
  report["patterns"] = out.string();
  report["k"] = kpat_pattern_set_size(set.get());
  print(report);
}

struct PruneArgs {
  std::string model;
  std::string patterns;
  kpat_prune_options opt{};
};

void prune(const Globals& g, PruneArgs a) {
  const Network net = load_network(a.model);
  const PatternSet set = load_patterns(a.patterns);
  a.opt.seed = g.seed;
  kpat_network* pruned = nullptr;
  double acc = 0, dense_acc = 0;
  char* assignments = nullptr;
  char* trace = nullptr;
  check(kpat_network_accuracy(net.get(), g.seed, &dense_acc));
  check(kpat_prune(net.get(), set.get(), &a.opt, &pruned, &acc, &assignments, &trace));
  Network out(pruned);
  check(kpat_network_check_feasible(out.get(), set.get(), a.opt.connectivity_rate, a.opt.first_layer_rate));
  const fs::path model = fs::path(g.out_dir) / "pruned.ptk";
  fs::create_directories(g.out_dir);
  check(kpat_network_save(out.get(), model.string().c_str()));
  write_text(fs::path(g.out_dir) / "assignments.json", take(assignments) + "\n");
  write_text(fs::path(g.out_dir) / "trace.csv", take(trace));
  print({{"pruned_model", model.string()},
         {"dense_accuracy", dense_acc},
         {"pruned_accuracy", acc},
         {"assignments", (fs::path(g.out_dir) / "assignments.json").string()},
         {"trace", (fs::path(g.out_dir) / "trace.csv").string()}});
}

struct LayerArgs {
  std::string model;
  std::string patterns;
  int layer = -1;
};

void reorder(const Globals& g, const LayerArgs& a) {
  const Network net = load_network(a.model);
  const PatternSet set = load_patterns(a.patterns);
  const std::size_t n = kpat_network_conv_count(net.get());
  json files = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    if (a.layer >= 0 && static_cast<std::size_t>(a.layer) != i) continue;
    char* text = nullptr;
    check(kpat_reorder_layer(net.get(), i, set.get(), &text));
    const fs::path out = fs::path(g.out_dir) / ("conv" + std::to_string(i) + ".sparse.json");
    write_text(out, take(text) + "\n");
    files.push_back(out.string());
  }
  if (a.layer >= 0 && files.empty()) usage_error("layer " + std::to_string(a.layer) + " out of range");
  print({{"reordered", files}});
}

struct EncodeArgs {
  std::string model;
  std::string patterns;
  std::string sparse;
  std::string out;
  std::string manifest;
};

void encode(const Globals& g, const EncodeArgs& a) {
  if (!a.sparse.empty()) {
    kpat_fkw* m = nullptr;
    check(kpat_fkw_from_sparse_json(read_text(a.sparse).c_str(), &m));
    Fkw model(m);
    const fs::path out = g.output(a.out, fs::path(a.sparse).stem().stem().string() + ".fkw");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    check(kpat_fkw_save(model.get(), out.string().c_str()));
    print({{"fkw", out.string()}, {"kernels", kpat_fkw_kernel_count(model.get())}});
    return;
  }
  if (a.model.empty() || a.patterns.empty()) usage_error("encode needs --sparse, or --model with --patterns");
  const Network net = load_network(a.model);
  const PatternSet set = load_patterns(a.patterns);
  kpat_manifest* mm = nullptr;
  check(kpat_manifest_new(set.get(), &mm));
  Manifest manifest(mm);
  fs::create_directories(g.out_dir);
  json files = json::array();
  const std::size_t n = kpat_network_conv_count(net.get());
  for (std::size_t i = 0; i < n; ++i) {
    kpat_fkw* m = nullptr;
    check(kpat_fkw_from_network(net.get(), i, set.get(), &m));
    Fkw model(m);
    const std::string name = "conv" + std::to_string(i);
    const fs::path file = fs::path(g.out_dir) / (name + ".fkw");
    check(kpat_fkw_save(model.get(), file.string().c_str()));
    check(kpat_manifest_add_layer(manifest.get(), name.c_str(), (name + ".fkw").c_str(), model.get(), nullptr, 1));
    files.push_back(file.string());
  }
  char* text = nullptr;
  check(kpat_manifest_emit(manifest.get(), &text));
  const fs::path mpath = a.manifest.empty() ? fs::path(g.out_dir) / "manifest.json" : fs::path(a.manifest);
  write_text(mpath, take(text));
  print({{"fkw", files}, {"manifest", mpath.string()}});
}

struct DecodeArgs {
  std::string model;
  std::string dense;
  std::string json_out;
  std::string sparse;
};

void decode(const Globals& g, const DecodeArgs& a) {
  const Fkw model = load_fkw(a.model);
  const std::string stem = fs::path(a.model).stem().string();
  const fs::path dense = g.output(a.dense, stem + ".dense.ptk");
  if (dense.has_parent_path()) fs::create_directories(dense.parent_path());
  check(kpat_fkw_save_dense(model.get(), dense.string().c_str()));
  json report{{"dense", dense.string()}};
  char* dump = nullptr;
  check(kpat_fkw_to_json(model.get(), &dump));
  const fs::path jpath = g.output(a.json_out, stem + ".fkw.json");
  write_text(jpath, take(dump) + "\n");
  report["json"] = jpath.string();
  char* sparse = nullptr;
  check(kpat_fkw_to_sparse_json(model.get(), &sparse));
  const fs::path spath = g.output(a.sparse, stem + ".sparse.json");
  write_text(spath, take(sparse) + "\n");
  report["sparse"] = spath.string();
  print(report);
}

struct ValidateArgs {
  std::string manifest;
  std::string fkw;
  std::string patterns;
};

void validate(const ValidateArgs& a) {
  if (a.manifest.empty() && a.fkw.empty() && a.patterns.empty()) {
    usage_error("validate needs --manifest, --fkw or --patterns");
  }
  json report{{"valid", true}};
  if (!a.manifest.empty()) {
    kpat_manifest* m = nullptr;
    char* v = nullptr;
    const kpat_status s = kpat_manifest_parse(read_text(a.manifest).c_str(), &m, &v);
    const std::string violations = take(v);
    if (s != KPAT_OK) {
      if (violations.empty()) throw Failure{s, kpat_last_error()};
      json err{{"valid", false}, {"violations", json::parse(violations)}};
      std::cout << err.dump(2) << "\n";
      throw Failure{s, kpat_last_error()};
    }
    Manifest keep(m);
    report["layers"] = kpat_manifest_layer_count(m);
  }
  if (!a.fkw.empty()) report["kernels"] = kpat_fkw_kernel_count(load_fkw(a.fkw).get());
  if (!a.patterns.empty()) report["k"] = kpat_pattern_set_size(load_patterns(a.patterns).get());
  print(report);
}

struct RunArgs {
  std::string model;
  std::string manifest;
  std::string input;
  std::string config;
  std::string stats;
  std::string out;
  bool relu = false;
  bool oracle = false;
};

void run(const Globals& g, const RunArgs& a) {
  if (a.model.empty() == a.manifest.empty()) usage_error("run needs exactly one of --model or --manifest");
  Feature output;
  json stats;
  Feature oracle;
  if (!a.model.empty()) {
    const Fkw model = load_fkw(a.model);
    kpat_layer_shape s{};
    check(kpat_fkw_shape(model.get(), &s));
    const Feature in = input_for(g, a.input, s.in_channels, s.input_h, s.input_w);
    const std::string cfg = a.config.empty() ? std::string() : read_text(a.config);
    kpat_feature* y = nullptr;
    char* st = nullptr;
    check(kpat_run(model.get(), in.get(), cfg.empty() ? nullptr : cfg.c_str(), g.threads, a.relu ? 1 : 0, &y, &st));
    output.reset(y);
    stats = json::parse(take(st));
    if (a.oracle) {
      kpat_feature* d = nullptr;
      check(kpat_run_dense(model.get(), in.get(), a.relu ? 1 : 0, &d));
      oracle.reset(d);
    }
  } else {
    const Manifest m = load_manifest(a.manifest);
    char* first_file = nullptr;
    check(kpat_manifest_layer(m.get(), 0, nullptr, &first_file, nullptr));
    fs::path first(take(first_file));
    if (first.is_relative()) first = fs::path(manifest_base(a.manifest)) / first;
    kpat_layer_shape s{};
    check(kpat_fkw_shape(load_fkw(first.string()).get(), &s));
    const Feature in = input_for(g, a.input, s.in_channels, s.input_h, s.input_w);
    const std::string base = manifest_base(a.manifest);
    kpat_feature* y = nullptr;
    char* st = nullptr;
    check(kpat_manifest_run(m.get(), base.c_str(), in.get(), g.threads, &y, &st));
    output.reset(y);
    stats = json::parse(take(st));
    if (a.oracle) {
      kpat_feature* d = nullptr;
      check(kpat_manifest_run_dense(m.get(), base.c_str(), in.get(), &d));
      oracle.reset(d);
    }
  }
  if (oracle) {
    double err = 0;
    check(kpat_feature_max_rel_error(output.get(), oracle.get(), &err));
    stats["oracle_max_rel_error"] = err;
  }
  const fs::path out = g.output(a.out, "output.ptk");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  check(kpat_feature_save(output.get(), out.string().c_str()));
  const fs::path spath = g.output(a.stats, "stats.json");
  write_text(spath, stats.dump(2) + "\n");
  json report = stats;
  report["output"] = out.string();
  report["stats"] = spath.string();
  print(report);
}

struct TuneArgs {
  std::string model;
  std::string manifest;
  std::string input;
  std::size_t budget = 256;
  std::string out;
  std::string history;
};

void tune(const Globals& g, const TuneArgs& a) {
  if (a.model.empty() == a.manifest.empty()) usage_error("tune needs exactly one of --model or --manifest");
  auto tune_one = [&](const Fkw& model, const std::string& tag) {
    kpat_layer_shape s{};
    check(kpat_fkw_shape(model.get(), &s));
    const Feature in = input_for(g, a.input, s.in_channels, s.input_h, s.input_w);
    char* best = nullptr;
    char* hist = nullptr;
    check(kpat_tune(model.get(), in.get(), a.budget, g.seed, &best, &hist));
    const fs::path hpath = g.output(a.history, tag + ".history.csv");
    write_text(hpath, take(hist));
    return std::make_pair(take(best), hpath.string());
  };
  if (!a.model.empty()) {
    const Fkw model = load_fkw(a.model);
    const auto [best, hist] = tune_one(model, fs::path(a.model).stem().string());
    const fs::path out = g.output(a.out, "best.json");
    write_text(out, best + "\n");
    print({{"best", json::parse(best)}, {"config", out.string()}, {"history", hist}});
    return;
  }
  Manifest m = load_manifest(a.manifest);
  const std::string base = manifest_base(a.manifest);
  json layers = json::array();
  for (std::size_t i = 0; i < kpat_manifest_layer_count(m.get()); ++i) {
    char* name = nullptr;
    char* file = nullptr;
    check(kpat_manifest_layer(m.get(), i, &name, &file, nullptr));
    const std::string lname = take(name);
    fs::path p(take(file));
    if (p.is_relative()) p = fs::path(base) / p;
    const Fkw model = load_fkw(p.string());
    // Layers after the first see a random input of the right shape.
    const auto [best, hist] = tune_one(model, lname);
    check(kpat_manifest_set_config(m.get(), i, best.c_str()));
    layers.push_back({{"name", lname}, {"best", json::parse(best)}, {"history", hist}});
  }
  char* text = nullptr;
  check(kpat_manifest_emit(m.get(), &text));
  const fs::path out = a.out.empty() ? fs::path(a.manifest) : fs::path(a.out);
  write_text(out, take(text));
  print({{"manifest", out.string()}, {"layers", layers}});
}

struct BenchArgs {
  std::string patterns;
  std::size_t k = 8;
  double rate = 3.6;
  std::size_t channels = 64;
  std::size_t size = 32;
  std::size_t repeats = 5;
  std::size_t tune_budget = 256;
  std::string json_out;
  std::string md_out;
};

void bench(const Globals& g, const BenchArgs& a) {
  json opt{{"in_channels", a.channels}, {"out_channels", a.channels}, {"input_h", a.size}, {"input_w", a.size},
           {"k", a.k},                  {"rate", a.rate},           {"seed", g.seed},     {"repeats", a.repeats},
           {"tune_budget", a.tune_budget}, {"threads", g.threads}};
  if (!a.patterns.empty()) {
    std::vector<std::size_t> counts;
    std::stringstream ss(a.patterns);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(item, &used);
        if (used != item.size() || v == 0) throw std::invalid_argument(item);
        counts.push_back(v);
      } catch (const std::exception&) {
        usage_error("--patterns expects a comma-separated list of positive integers, got \"" + a.patterns + "\"");
      }
    }
    opt["pattern_counts"] = counts;
  }
  char* rj = nullptr;
  char* md = nullptr;
  check(kpat_bench(opt.dump().c_str(), &rj, &md));
  const fs::path jpath = g.output(a.json_out, "bench.json");
  const fs::path mpath = g.output(a.md_out, "bench.md");
  write_text(jpath, take(rj));
  const std::string table = take(md);
  write_text(mpath, table);
  std::cout << table;
}

int report_failure(const Failure& f) {
  static const char* kinds[] = {"ok", "internal", "validation", "divergence", "io"};
  const int code = static_cast<int>(f.status);
  json err{{"error", {{"code", code}, {"kind", kinds[code >= 0 && code <= 4 ? code : 1]}, {"message", f.message}}}};
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pattern-based pruning and sparse convolution toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Executor worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for default outputs")->capture_default_str();

  GenPatternsArgs gp;
  auto* c_gen = app.add_subcommand("gen-patterns", "Build the top-k pattern set from a model's natural patterns");
  c_gen->add_option("--k", gp.k, "Pattern count (1..56)")->capture_default_str();
  c_gen->add_option("--model", gp.model, "Network file; trains the toy model when omitted");
  c_gen->add_option("--epochs", gp.epochs, "Dense training epochs for the toy model")->capture_default_str();
  c_gen->add_option("--lr", gp.lr, "Dense training learning rate")->capture_default_str();
  c_gen->add_option("--out", gp.out, "Pattern-set JSON (default <out-dir>/patterns.json)");

  PruneArgs pr;
  kpat_prune_options_default(&pr.opt);
  auto* c_prune = app.add_subcommand("prune", "ADMM pattern and connectivity pruning on the toy task");
  c_prune->add_option("--model", pr.model, "Dense network file")->required();
  c_prune->add_option("--patterns", pr.patterns, "Pattern-set JSON")->required();
  c_prune->add_option("--rate", pr.opt.connectivity_rate, "Connectivity pruning rate")->capture_default_str();
  c_prune->add_option("--first-rate", pr.opt.first_layer_rate, "Rate for the first layer")->capture_default_str();
  c_prune->add_option("--admm-iterations", pr.opt.admm_iterations)->capture_default_str();
  c_prune->add_option("--epochs-per-iteration", pr.opt.epochs_per_iteration)->capture_default_str();
  c_prune->add_option("--finetune-epochs", pr.opt.finetune_epochs)->capture_default_str();
  c_prune->add_option("--lr", pr.opt.learning_rate)->capture_default_str();
  c_prune->add_option("--rho", pr.opt.rho)->capture_default_str();
  bool freeze = false;
  c_prune->add_flag("--freeze-patterns", freeze, "Keep each kernel's first pattern assignment");

  LayerArgs ro;
  auto* c_reorder = app.add_subcommand("reorder", "Sparsify and reorder CONV layers, writing sparse-layer JSON");
  c_reorder->add_option("--model", ro.model, "Pruned network file")->required();
  c_reorder->add_option("--patterns", ro.patterns, "Pattern-set JSON")->required();
  c_reorder->add_option("--layer", ro.layer, "Only this CONV layer");

  EncodeArgs en;
  auto* c_encode = app.add_subcommand("encode", "Write FKW files (and an LR manifest for a whole network)");
  c_encode->add_option("--model", en.model, "Pruned network file");
  c_encode->add_option("--patterns", en.patterns, "Pattern-set JSON");
  c_encode->add_option("--sparse", en.sparse, "Sparse-layer JSON from reorder");
  c_encode->add_option("--out", en.out, "FKW output for --sparse");
  c_encode->add_option("--manifest", en.manifest, "Manifest output (default <out-dir>/manifest.json)");

  DecodeArgs de;
  auto* c_decode = app.add_subcommand("decode", "Expand an FKW file to dense weights, a JSON dump and sparse JSON");
  c_decode->add_option("--model", de.model, "FKW file")->required();
  c_decode->add_option("--dense", de.dense, "Dense weight output");
  c_decode->add_option("--json", de.json_out, "Array dump output");
  c_decode->add_option("--sparse", de.sparse, "Sparse-layer JSON output");

  ValidateArgs va;
  auto* c_validate = app.add_subcommand("validate", "Check a manifest, FKW file or pattern set");
  c_validate->add_option("--manifest", va.manifest);
  c_validate->add_option("--fkw", va.fkw);
  c_validate->add_option("--patterns", va.patterns);

  RunArgs ru;
  auto* c_run = app.add_subcommand("run", "Execute an FKW layer or a whole manifest");
  c_run->add_option("--model", ru.model, "FKW file");
  c_run->add_option("--manifest", ru.manifest, "LR manifest");
  c_run->add_option("--input", ru.input, "Input feature map (random when omitted)");
  c_run->add_option("--config", ru.config, "Execution config JSON (single layer)");
  c_run->add_option("--stats", ru.stats, "Stats JSON output (default <out-dir>/stats.json)");
  c_run->add_option("--out", ru.out, "Output feature map (default <out-dir>/output.ptk)");
  c_run->add_flag("--relu", ru.relu, "Apply ReLU (single layer)");
  c_run->add_flag("--oracle", ru.oracle, "Compare against the dense reference");

  TuneArgs tu;
  auto* c_tune = app.add_subcommand("tune", "Search execution configs with the genetic tuner");
  c_tune->add_option("--model", tu.model, "FKW file");
  c_tune->add_option("--manifest", tu.manifest, "Tune every layer and rewrite the manifest");
  c_tune->add_option("--input", tu.input, "Input feature map (random when omitted)");
  c_tune->add_option("--budget", tu.budget, "Fitness evaluations")->capture_default_str();
  c_tune->add_option("--out", tu.out, "Best config JSON, or manifest output with --manifest");
  c_tune->add_option("--history", tu.history, "History CSV");

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench", "Dense, CSR and FKW ablation on a synthetic layer");
  c_bench->add_option("--patterns", be.patterns, "Comma-separated pattern counts for the trade-off table");
  c_bench->add_option("--k", be.k, "Pattern count for the ablation")->capture_default_str();
  c_bench->add_option("--rate", be.rate, "Connectivity pruning rate")->capture_default_str();
  c_bench->add_option("--channels", be.channels, "Input and output channels")->capture_default_str();
  c_bench->add_option("--size", be.size, "Input height and width")->capture_default_str();
  c_bench->add_option("--repeats", be.repeats, "Timing repeats (median)")->capture_default_str();
  c_bench->add_option("--tune-budget", be.tune_budget, "Tuner budget, 0 to skip")->capture_default_str();
  c_bench->add_option("--json", be.json_out, "Report JSON (default <out-dir>/bench.json)");
  c_bench->add_option("--md", be.md_out, "Report Markdown (default <out-dir>/bench.md)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_failure({KPAT_ERR_VALIDATION, e.what()});
  }

  try {
    if (*c_gen) gen_patterns(g, gp);
    if (*c_prune) {
      pr.opt.freeze_patterns = freeze ? 1 : 0;
      prune(g, pr);
    }
    if (*c_reorder) reorder(g, ro);
    if (*c_encode) encode(g, en);
    if (*c_decode) decode(g, de);
    if (*c_validate) validate(va);
    if (*c_run) run(g, ru);
    if (*c_tune) tune(g, tu);
    if (*c_bench) bench(g, be);
  } catch (const Failure& f) {
    return report_failure(f);
  } catch (const fs::filesystem_error& e) {
    return report_failure({KPAT_ERR_IO, e.what()});
  } catch (const json::exception& e) {
    return report_failure({KPAT_ERR_VALIDATION, e.what()});
  } catch (const std::exception& e) {
    return report_failure({KPAT_ERR_INTERNAL, e.what()});
  }
  return 0;
}
