#include "perfuseg/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "perfuseg/error.hpp"

namespace perfuseg::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining())
    fail(ErrorKind::IncompleteFile, "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                        ", only " + std::to_string(remaining()) + " remain");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint16_t ByteReader::u16() {
  auto b = take(2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint16_t ByteReader::peek_u16() const {
  if (remaining() < 2) fail(ErrorKind::IncompleteFile, "needed 2 bytes at offset " + std::to_string(pos_));
  return static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::string() {
  const auto n = u32();
  auto b = take(n);
  return std::string(b.begin(), b.end());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    fail(ErrorKind::Io, "short read on '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed on '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> encode_ctpv(const CtpVolume& volume) {
  const auto& g = volume.geometry();
  std::vector<std::uint8_t> out(std::begin(kCtpvMagic), std::end(kCtpvMagic));
  put_u32(out, static_cast<std::uint32_t>(g.frames));
  put_u32(out, static_cast<std::uint32_t>(g.slices));
  put_u32(out, static_cast<std::uint32_t>(g.height));
  put_u32(out, static_cast<std::uint32_t>(g.width));
  put_f32(out, g.frame_interval);
  put_f32(out, g.spacing);
  put_f32(out, g.thickness);
  const std::size_t header = out.size();
  out.resize(header + volume.voxels().size() * sizeof(float));
  std::memcpy(out.data() + header, volume.voxels().data(), volume.voxels().size() * sizeof(float));
  return out;
}

CtpVolume decode_ctpv(std::span<const std::uint8_t> bytes, std::string patient_id) {
  ByteReader r(bytes);
  auto magic = r.take(8);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCtpvMagic)))
    fail(ErrorKind::Format, "missing CTPV0001 magic");
  VolumeGeometry g;
  g.frames = static_cast<int>(r.u32());
  g.slices = static_cast<int>(r.u32());
  g.height = static_cast<int>(r.u32());
  g.width = static_cast<int>(r.u32());
  g.frame_interval = r.f32();
  g.spacing = r.f32();
  g.thickness = r.f32();
  const std::size_t count = g.voxel_count();
  require(r.remaining() == count * sizeof(float), ErrorKind::IncompleteFile,
          "CTPV payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
              std::to_string(count * sizeof(float)));
  std::vector<float> voxels(count);
  auto payload = r.take(count * sizeof(float));
  std::memcpy(voxels.data(), payload.data(), payload.size());
  CtpVolume v(std::move(patient_id), g, std::move(voxels));
  v.validate();
  return v;
}

void write_ctpv(const CtpVolume& volume, const std::filesystem::path& path) {
  write_file(path, encode_ctpv(volume));
}

CtpVolume read_ctpv(const std::filesystem::path& path) {
  return decode_ctpv(read_file(path), path.stem().string());
}

std::vector<std::uint8_t> encode_pgm(const Image<std::uint8_t>& image) {
  std::ostringstream header;
  header << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  const auto h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), image.data(), image.data() + image.size());
  return out;
}

Image<std::uint8_t> decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > 1'000'000) fail(ErrorKind::Format, "PGM header value too large");
    }
    if (!any) fail(ErrorKind::Format, "malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail(ErrorKind::Format, "not a binary PGM (P5)");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (maxval != 255) fail(ErrorKind::Unsupported, "PGM maxval " + std::to_string(maxval) + " (only 255 supported)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail(ErrorKind::Format, "malformed PGM header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < n) fail(ErrorKind::IncompleteFile, "PGM raster truncated");
  Image<std::uint8_t> img(h, w);
  std::memcpy(img.data(), bytes.data() + pos, n);
  return img;
}

void write_pgm(const Image<std::uint8_t>& image, const std::filesystem::path& path) {
  write_file(path, encode_pgm(image));
}

Image<std::uint8_t> read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void write_label_map(const LabelMap& map, const std::filesystem::path& path) { write_pgm(map.to_bytes(), path); }

LabelMap read_label_map(const std::filesystem::path& path, int slice_index) {
  return LabelMap::from_bytes(slice_index, read_pgm(path));
}

void write_raw_f32(std::span<const float> values, const std::filesystem::path& path) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size() * sizeof(float)));
}

std::vector<float> read_raw_f32(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  require(bytes.size() % sizeof(float) == 0, ErrorKind::Format, "raw f32 file size is not a multiple of 4");
  std::vector<float> out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string slice_file_name(int slice, const std::string& suffix) {
  std::ostringstream s;
  s << "slice_" << std::setw(3) << std::setfill('0') << slice << suffix << ".pgm";
  return s.str();
}

Image<std::uint8_t> preview_bytes(const ImageF& image) {
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const float v = image.data()[i];
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image<std::uint8_t> out = Image<std::uint8_t>::Zero(image.rows(), image.cols());
  if (!(hi > lo)) return out;
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const float v = image.data()[i];
    if (!std::isfinite(v)) continue;
    out.data()[i] = static_cast<std::uint8_t>(std::lround(255.0f * (v - lo) / (hi - lo)));
  }
  return out;
}

}  // namespace perfuseg::io
