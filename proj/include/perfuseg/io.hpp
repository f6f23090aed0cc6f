#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/labels.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg::io {

/// CTPV v1: magic "CTPV0001", u32 T, S, H, W, f32 frame_interval, spacing,
/// thickness, then T*S*H*W f32 voxels in (t, s, y, x) order. Little endian.
inline constexpr char kCtpvMagic[8] = {'C', 'T', 'P', 'V', '0', '0', '0', '1'};

std::vector<std::uint8_t> encode_ctpv(const CtpVolume& volume);
/// The patient id is not stored in the file; it is passed in by the caller.
CtpVolume decode_ctpv(std::span<const std::uint8_t> bytes, std::string patient_id);

void write_ctpv(const CtpVolume& volume, const std::filesystem::path& path);
/// Patient id defaults to the file stem.
CtpVolume read_ctpv(const std::filesystem::path& path);

/// Binary PGM (P5), maxval 255.
std::vector<std::uint8_t> encode_pgm(const Image<std::uint8_t>& image);
Image<std::uint8_t> decode_pgm(std::span<const std::uint8_t> bytes);
void write_pgm(const Image<std::uint8_t>& image, const std::filesystem::path& path);
Image<std::uint8_t> read_pgm(const std::filesystem::path& path);

void write_label_map(const LabelMap& map, const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path, int slice_index);

/// Raw little-endian f32 grid, no header.
void write_raw_f32(std::span<const float> values, const std::filesystem::path& path);
std::vector<float> read_raw_f32(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Label file name for slice i inside a label directory: "slice_007.pgm".
std::string slice_file_name(int slice, const std::string& suffix = "");

/// Linear min-max preview of a float image as 8-bit, ignoring non-finite values.
Image<std::uint8_t> preview_bytes(const ImageF& image);

// Little-endian scalar helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_string(std::vector<std::uint8_t>& out, const std::string& s);

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint16_t u16();
  std::uint16_t peek_u16() const;
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string string();  // u32 length prefix
  std::span<const std::uint8_t> take(std::size_t n);
  void skip(std::size_t n) { take(n); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace perfuseg::io
