#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kpat/executor.hpp"
#include "kpat/pattern.hpp"

namespace kpat {

inline constexpr int kManifestVersion = 1;

// Per-layer entry of the layerwise manifest.
struct LayerRecord {
  std::string name;
  std::string device = "cpu";
  std::vector<std::size_t> patterns;  // ids present in the layer
  std::string fkw_file;
  ExecConfig config;
  bool relu = true;
  LayerShape shape;

  bool operator==(const LayerRecord&) const = default;
};

struct ModelManifest {
  int version = kManifestVersion;
  PatternSet pattern_set;
  std::vector<LayerRecord> layers;

  bool operator==(const ModelManifest& o) const {
    return version == o.version && pattern_set.patterns() == o.pattern_set.patterns() && layers == o.layers;
  }
};

struct Violation {
  std::string path;  // JSON pointer
  std::string message;
};

struct ManifestParse {
  std::optional<ModelManifest> manifest;
  std::vector<Violation> violations;

  bool ok() const { return manifest.has_value(); }
};

// Collects every violation instead of stopping at the first.
ManifestParse lr_parse(const std::string& text);
// Throws FormatError listing all violations.
ModelManifest lr_parse_or_throw(const std::string& text);

std::vector<Violation> lr_validate(const ModelManifest& m);

// Canonical form: sorted keys, no whitespace, trailing newline.
std::string lr_emit(const ModelManifest& m);

}  // namespace kpat
