#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kpat/tensor.hpp"

namespace kpat {

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

// Little-endian byte sink/source shared by the binary codecs.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  const std::vector<std::uint8_t>& data() const { return out_; }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8(const char* what);
  std::uint16_t u16(const char* what);
  std::uint32_t u32(const char* what);
  float f32(const char* what);
  void expect_magic(const char magic[4]);
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const;
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// "PTK0" container: magic, u32 record count, then per record
// u32 rank, u32 dims[rank], f32 data[prod(dims)]; all little-endian.
struct TensorRecord {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode_ptk(std::span<const TensorRecord> records);
std::vector<TensorRecord> decode_ptk(std::span<const std::uint8_t> bytes);

// A feature map is one rank-3 record [C, H, W].
TensorRecord feature_record(const FeatureMap& map);
FeatureMap feature_from_record(const TensorRecord& rec);

// A CONV layer is three records: weights [Cout, Cin, P, Q], bias [Cout],
// geometry [stride, input_h, input_w].
void append_weight_records(const WeightTensor& w, std::vector<TensorRecord>& out);
WeightTensor weights_from_records(std::span<const TensorRecord> recs);

void save_feature(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap load_feature(const std::filesystem::path& path);
void save_weights(const std::filesystem::path& path, const WeightTensor& w);
WeightTensor load_weights(const std::filesystem::path& path);

}  // namespace kpat
