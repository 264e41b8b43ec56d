#include "kpat/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>

#include "kpat/error.hpp"

namespace kpat {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

std::string read_text(const fs::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::u16(std::uint16_t v) {
  out_.push_back(static_cast<std::uint8_t>(v & 0xff));
  out_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated input reading ") + what + " at byte " + std::to_string(pos_));
  }
}

std::uint8_t ByteReader::u8(const char* what) {
  need(1, what);
  return in_[pos_++];
}

std::uint16_t ByteReader::u16(const char* what) {
  need(2, what);
  std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32(const char* what) {
  need(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }

void ByteReader::expect_magic(const char magic[4]) {
  need(4, "magic");
  if (std::memcmp(in_.data() + pos_, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected \"") + std::string(magic, 4) + "\"");
  }
  pos_ += 4;
}

std::vector<std::uint8_t> encode_ptk(std::span<const TensorRecord> records) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>("PTK0"), 4});
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    std::size_t count = 1;
    for (auto d : rec.dims) count *= d;
    if (count != rec.data.size()) throw ShapeError("tensor record dims do not match its data length");
    w.u32(static_cast<std::uint32_t>(rec.dims.size()));
    for (auto d : rec.dims) w.u32(d);
    for (float v : rec.data) w.f32(v);
  }
  return w.take();
}

std::vector<TensorRecord> decode_ptk(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("PTK0");
  const std::uint32_t n = r.u32("record count");
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord rec;
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("record " + std::to_string(i) + " has implausible rank " + std::to_string(rank));
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.dims.push_back(r.u32("dim"));
      count *= rec.dims.back();
    }
    if (count * 4 > r.remaining()) {
      throw FormatError("record " + std::to_string(i) + " declares more data than the file holds");
    }
    rec.data.resize(count);
    for (auto& v : rec.data) v = r.f32("data");
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record");
  return out;
}

TensorRecord feature_record(const FeatureMap& map) {
  return {{static_cast<std::uint32_t>(map.channels), static_cast<std::uint32_t>(map.height),
           static_cast<std::uint32_t>(map.width)},
          map.data};
}

FeatureMap feature_from_record(const TensorRecord& rec) {
  if (rec.dims.size() != 3) throw FormatError("feature map record must be rank 3");
  FeatureMap m;
  m.channels = rec.dims[0];
  m.height = rec.dims[1];
  m.width = rec.dims[2];
  m.data = rec.data;
  return m;
}

void append_weight_records(const WeightTensor& w, std::vector<TensorRecord>& out) {
  const LayerShape& s = w.shape;
  out.push_back({{static_cast<std::uint32_t>(s.out_channels), static_cast<std::uint32_t>(s.in_channels),
                  static_cast<std::uint32_t>(s.kernel_h), static_cast<std::uint32_t>(s.kernel_w)},
                 w.data});
  out.push_back({{static_cast<std::uint32_t>(s.out_channels)}, w.bias});
  out.push_back({{3},
                 {static_cast<float>(s.stride), static_cast<float>(s.input_h), static_cast<float>(s.input_w)}});
}

WeightTensor weights_from_records(std::span<const TensorRecord> recs) {
  if (recs.size() < 3) throw FormatError("CONV layer needs weight, bias and geometry records");
  const auto& wr = recs[0];
  const auto& br = recs[1];
  const auto& gr = recs[2];
  if (wr.dims.size() != 4) throw FormatError("CONV weight record must be rank 4");
  if (br.dims.size() != 1 || br.dims[0] != wr.dims[0]) throw FormatError("bias record does not match out_channels");
  if (gr.dims.size() != 1 || gr.dims[0] != 3) throw FormatError("geometry record must be [stride, input_h, input_w]");
  WeightTensor w;
  w.shape.out_channels = wr.dims[0];
  w.shape.in_channels = wr.dims[1];
  w.shape.kernel_h = wr.dims[2];
  w.shape.kernel_w = wr.dims[3];
  w.shape.stride = static_cast<std::size_t>(gr.data[0]);
  w.shape.input_h = static_cast<std::size_t>(gr.data[1]);
  w.shape.input_w = static_cast<std::size_t>(gr.data[2]);
  w.data = wr.data;
  w.bias = br.data;
  w.validate();
  return w;
}

void save_feature(const fs::path& path, const FeatureMap& map) {
  map.validate();
  std::vector<TensorRecord> recs{feature_record(map)};
  write_file_atomic(path, encode_ptk(recs));
}

FeatureMap load_feature(const fs::path& path) {
  auto recs = decode_ptk(read_file(path));
  if (recs.size() != 1) throw FormatError(path.string() + ": feature file must hold exactly one record");
  auto m = feature_from_record(recs[0]);
  m.validate();
  return m;
}

void save_weights(const fs::path& path, const WeightTensor& w) {
  w.validate();
  std::vector<TensorRecord> recs;
  append_weight_records(w, recs);
  write_file_atomic(path, encode_ptk(recs));
}

WeightTensor load_weights(const fs::path& path) {
  auto recs = decode_ptk(read_file(path));
  if (recs.size() != 3) throw FormatError(path.string() + ": weight file must hold exactly three records");
  return weights_from_records(recs);
}

}  // namespace kpat
