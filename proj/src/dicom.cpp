#include "perfuseg/dicom.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"

namespace perfuseg::dicom {

namespace {

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kAcquisitionTime = tag(0x0008, 0x0032);
constexpr std::uint32_t kPatientId = tag(0x0010, 0x0020);
constexpr std::uint32_t kSliceThickness = tag(0x0018, 0x0050);
constexpr std::uint32_t kSeriesUid = tag(0x0020, 0x000E);
constexpr std::uint32_t kSliceLocation = tag(0x0020, 0x1041);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kPixelSpacing = tag(0x0028, 0x0030);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimitation = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimitation = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

bool has_long_length(const std::string& vr) {
  static const char* long_vrs[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"};
  return std::any_of(std::begin(long_vrs), std::end(long_vrs), [&](const char* v) { return vr == v; });
}

struct Element {
  std::uint32_t tag = 0;
  std::string vr;
  std::span<const std::uint8_t> value;
};

std::string trimmed(std::span<const std::uint8_t> v) {
  std::string s(v.begin(), v.end());
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

double parse_ds(const std::string& s, std::uint32_t t) {
  // multi-valued DS: take the first component
  const auto first = s.substr(0, s.find('\\'));
  double v = 0.0;
  const char* begin = first.data();
  while (begin < first.data() + first.size() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, first.data() + first.size(), v);
  if (ec != std::errc() || ptr != first.data() + first.size()) {
    std::ostringstream msg;
    msg << "element (" << std::hex << (t >> 16) << ',' << (t & 0xFFFF) << ") holds non-numeric DS '" << s << "'";
    fail(ErrorKind::Format, msg.str());
  }
  return v;
}

std::uint16_t parse_us(const Element& e) {
  if (e.value.size() < 2) fail(ErrorKind::Format, "US element shorter than 2 bytes");
  return static_cast<std::uint16_t>(e.value[0] | (e.value[1] << 8));
}

void skip_item_contents(io::ByteReader& r);

/// Skips a sequence value of undefined length, positioned after its header.
void skip_undefined_sequence(io::ByteReader& r) {
  while (true) {
    const std::uint16_t g = r.u16();
    const std::uint16_t el = r.u16();
    const std::uint32_t t = tag(g, el);
    const std::uint32_t len = r.u32();
    if (t == kSequenceDelimitation) return;
    if (t != kItem) fail(ErrorKind::Format, "expected sequence item inside undefined-length sequence");
    if (len == kUndefinedLength) {
      skip_item_contents(r);
    } else {
      r.skip(len);
    }
  }
}

/// Skips explicit-VR elements up to and including an item delimiter.
void skip_item_contents(io::ByteReader& r) {
  while (true) {
    const std::uint16_t g = r.u16();
    const std::uint16_t el = r.u16();
    const std::uint32_t t = tag(g, el);
    if (t == kItemDelimitation) {
      r.u32();
      return;
    }
    auto vr_bytes = r.take(2);
    const std::string vr(vr_bytes.begin(), vr_bytes.end());
    std::uint32_t len = 0;
    if (has_long_length(vr)) {
      r.skip(2);
      len = r.u32();
    } else {
      len = r.u16();
    }
    if (len == kUndefinedLength) {
      skip_undefined_sequence(r);
    } else {
      r.skip(len);
    }
  }
}

/// Reads one explicit-VR element; undefined-length sequences are skipped and
/// returned with an empty value.
Element read_element(io::ByteReader& r) {
  Element e;
  const std::uint16_t g = r.u16();
  const std::uint16_t el = r.u16();
  e.tag = tag(g, el);
  auto vr_bytes = r.take(2);
  e.vr.assign(vr_bytes.begin(), vr_bytes.end());
  if (!std::isupper(static_cast<unsigned char>(e.vr[0])) || !std::isupper(static_cast<unsigned char>(e.vr[1])))
    fail(ErrorKind::Format, "invalid VR bytes; data set is not explicit VR");
  std::uint32_t len = 0;
  if (has_long_length(e.vr)) {
    r.skip(2);
    len = r.u32();
  } else {
    len = r.u16();
  }
  if (len == kUndefinedLength) {
    if (e.tag == kPixelData) fail(ErrorKind::Unsupported, "encapsulated (compressed) pixel data");
    if (e.vr != "SQ" && e.vr != "UN") fail(ErrorKind::Format, "undefined length on a non-sequence element");
    skip_undefined_sequence(r);
    return e;
  }
  e.value = r.take(len);
  return e;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_element(std::vector<std::uint8_t>& out, std::uint32_t t, const std::string& vr,
                 std::span<const std::uint8_t> value) {
  put_u16(out, static_cast<std::uint16_t>(t >> 16));
  put_u16(out, static_cast<std::uint16_t>(t & 0xFFFF));
  out.insert(out.end(), vr.begin(), vr.end());
  if (has_long_length(vr)) {
    put_u16(out, 0);
    io::put_u32(out, static_cast<std::uint32_t>(value.size()));
  } else {
    put_u16(out, static_cast<std::uint16_t>(value.size()));
  }
  out.insert(out.end(), value.begin(), value.end());
}

void put_text(std::vector<std::uint8_t>& out, std::uint32_t t, const std::string& vr, std::string text) {
  if (text.size() % 2 != 0) text.push_back(vr == "UI" ? '\0' : ' ');
  put_element(out, t, vr, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void put_us(std::vector<std::uint8_t>& out, std::uint32_t t, std::uint16_t v) {
  std::vector<std::uint8_t> b;
  put_u16(b, v);
  put_element(out, t, "US", b);
}

std::string format_ds(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.size() > 16) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    s = buf;
  }
  return s;
}

}  // namespace

float DicomFrame::calibrated(std::size_t index) const {
  const double raw = signed_pixels ? static_cast<double>(static_cast<std::int16_t>(stored[index]))
                                   : static_cast<double>(stored[index]);
  return static_cast<float>(raw * rescale_slope + rescale_intercept);
}

double parse_dicom_time(const std::string& tm) {
  const auto s = tm.substr(0, tm.find('\\'));
  auto digits = [&](std::size_t pos) -> int {
    if (pos + 2 > s.size()) return 0;
    if (!std::isdigit(static_cast<unsigned char>(s[pos])) || !std::isdigit(static_cast<unsigned char>(s[pos + 1])))
      fail(ErrorKind::Format, "malformed TM value '" + tm + "'");
    return (s[pos] - '0') * 10 + (s[pos + 1] - '0');
  };
  if (s.size() < 2) fail(ErrorKind::Format, "malformed TM value '" + tm + "'");
  double seconds = digits(0) * 3600.0 + digits(2) * 60.0 + digits(4);
  const auto dot = s.find('.');
  if (dot != std::string::npos && dot + 1 < s.size()) {
    long long frac = 0;
    long long scale = 1;
    for (std::size_t i = dot + 1; i < s.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) fail(ErrorKind::Format, "malformed TM value '" + tm + "'");
      if (scale >= 1'000'000) continue;
      frac = frac * 10 + (s[i] - '0');
      scale *= 10;
    }
    seconds += static_cast<double>(frac) / static_cast<double>(scale);
  }
  return seconds;
}

std::string format_dicom_time(double seconds) {
  const auto micros = static_cast<long long>(std::llround(seconds * 1e6));
  const long long whole = micros / 1'000'000;
  const long long frac = micros % 1'000'000;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%02lld%02lld%02lld.%06lld", whole / 3600, (whole / 60) % 60, whole % 60, frac);
  return buf;
}

DicomFrame parse_dicom_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 132) fail(ErrorKind::Format, "file shorter than the 128-byte preamble and DICM marker");
  if (std::memcmp(bytes.data() + 128, "DICM", 4) != 0) fail(ErrorKind::Format, "missing DICM marker after preamble");
  io::ByteReader r(bytes.subspan(132));

  std::map<std::uint32_t, Element> elements;
  std::string transfer_syntax;
  // File meta group is always explicit VR little endian.
  while (!r.done() && r.peek_u16() == 0x0002) {
    const Element e = read_element(r);
    if (e.tag == kTransferSyntax) transfer_syntax = trimmed(e.value);
  }
  if (transfer_syntax.empty()) fail(ErrorKind::Format, "file meta lacks TransferSyntaxUID (0002,0010)");
  if (transfer_syntax != kExplicitVrLittleEndian)
    fail(ErrorKind::Unsupported, "transfer syntax " + transfer_syntax + " (only Explicit VR Little Endian)");

  bool have_pixels = false;
  while (!r.done()) {
    Element e = read_element(r);
    if ((e.tag >> 16) == 0xFFFE) fail(ErrorKind::Format, "stray item delimiter in data set");
    if (e.tag == kPixelData) have_pixels = true;
    elements[e.tag] = e;
    if (have_pixels) break;
  }
  if (!have_pixels) fail(ErrorKind::IncompleteFile, "no PixelData (7FE0,0010) element");

  auto find = [&](std::uint32_t t) -> const Element* {
    auto it = elements.find(t);
    return it == elements.end() ? nullptr : &it->second;
  };
  auto required = [&](std::uint32_t t, const char* name) -> const Element& {
    const Element* e = find(t);
    if (!e) fail(ErrorKind::Format, std::string("missing required element ") + name);
    return *e;
  };

  DicomFrame f;
  f.rows = parse_us(required(kRows, "Rows"));
  f.columns = parse_us(required(kColumns, "Columns"));
  if (const auto* e = find(kSamplesPerPixel); e && parse_us(*e) != 1)
    fail(ErrorKind::Unsupported, "SamplesPerPixel != 1");
  if (const auto* e = find(kBitsAllocated); e && parse_us(*e) != 16)
    fail(ErrorKind::Unsupported, "BitsAllocated " + std::to_string(parse_us(*e)) + " (only 16)");
  if (const auto* e = find(kPixelRepresentation)) f.signed_pixels = parse_us(*e) == 1;
  if (const auto* e = find(kRescaleSlope)) f.rescale_slope = parse_ds(trimmed(e->value), kRescaleSlope);
  if (const auto* e = find(kRescaleIntercept)) f.rescale_intercept = parse_ds(trimmed(e->value), kRescaleIntercept);
  if (const auto* e = find(kSliceLocation)) f.slice_location = parse_ds(trimmed(e->value), kSliceLocation);
  if (const auto* e = find(kAcquisitionTime); e && !trimmed(e->value).empty())
    f.acquisition_time = parse_dicom_time(trimmed(e->value));
  if (const auto* e = find(kPixelSpacing)) f.pixel_spacing = parse_ds(trimmed(e->value), kPixelSpacing);
  if (const auto* e = find(kSliceThickness)) f.slice_thickness = parse_ds(trimmed(e->value), kSliceThickness);
  if (const auto* e = find(kPatientId)) f.patient_id = trimmed(e->value);
  if (const auto* e = find(kSeriesUid)) f.series_uid = trimmed(e->value);
  require(f.rescale_slope != 0.0, ErrorKind::Format, "RescaleSlope is zero");

  const Element& px = *find(kPixelData);
  const std::size_t n = static_cast<std::size_t>(f.rows) * f.columns;
  if (px.value.size() < n * 2)
    fail(ErrorKind::IncompleteFile, "PixelData holds " + std::to_string(px.value.size()) + " bytes, expected " +
                                        std::to_string(n * 2));
  f.stored.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    f.stored[i] = static_cast<std::uint16_t>(px.value[2 * i] | (px.value[2 * i + 1] << 8));
  return f;
}

std::vector<std::uint8_t> serialize_dicom_file(const DicomFrame& f) {
  require(f.stored.size() == static_cast<std::size_t>(f.rows) * f.columns, ErrorKind::Shape,
          "stored pixel count does not match rows x columns");
  std::vector<std::uint8_t> meta;
  const std::uint8_t version[2] = {0x00, 0x01};
  put_element(meta, tag(0x0002, 0x0001), "OB", version);
  put_text(meta, tag(0x0002, 0x0002), "UI", "1.2.840.10008.5.1.4.1.1.2");
  const auto instance = "1.2.826.0.1.3680043.10.1." +
                        std::to_string(std::llabs(std::llround(f.slice_location * 100.0))) + "." +
                        std::to_string(std::llabs(std::llround(f.acquisition_time.value_or(0.0) * 1000.0)));
  put_text(meta, tag(0x0002, 0x0003), "UI", instance);
  put_text(meta, kTransferSyntax, "UI", kExplicitVrLittleEndian);

  std::vector<std::uint8_t> out(128, 0);
  out.insert(out.end(), {'D', 'I', 'C', 'M'});
  std::vector<std::uint8_t> group_length;
  io::put_u32(group_length, static_cast<std::uint32_t>(meta.size()));
  put_element(out, tag(0x0002, 0x0000), "UL", group_length);
  out.insert(out.end(), meta.begin(), meta.end());

  if (f.acquisition_time) put_text(out, kAcquisitionTime, "TM", format_dicom_time(*f.acquisition_time));
  put_text(out, kPatientId, "LO", f.patient_id);
  if (f.slice_thickness) put_text(out, kSliceThickness, "DS", format_ds(*f.slice_thickness));
  put_text(out, kSeriesUid, "UI", f.series_uid);
  put_text(out, kSliceLocation, "DS", format_ds(f.slice_location));
  put_us(out, kSamplesPerPixel, 1);
  put_text(out, tag(0x0028, 0x0004), "CS", "MONOCHROME2");
  put_us(out, kRows, static_cast<std::uint16_t>(f.rows));
  put_us(out, kColumns, static_cast<std::uint16_t>(f.columns));
  if (f.pixel_spacing) put_text(out, kPixelSpacing, "DS", format_ds(*f.pixel_spacing) + "\\" + format_ds(*f.pixel_spacing));
  put_us(out, kBitsAllocated, 16);
  put_us(out, tag(0x0028, 0x0101), 16);
  put_us(out, tag(0x0028, 0x0102), 15);
  put_us(out, kPixelRepresentation, f.signed_pixels ? 1 : 0);
  put_text(out, kRescaleIntercept, "DS", format_ds(f.rescale_intercept));
  put_text(out, kRescaleSlope, "DS", format_ds(f.rescale_slope));
  std::vector<std::uint8_t> px;
  px.reserve(f.stored.size() * 2);
  for (auto v : f.stored) put_u16(px, v);
  put_element(out, kPixelData, "OW", px);
  return out;
}

CtpVolume assemble_volume(const std::vector<DicomFrame>& frames, const AssembleConfig& config) {
  require(!frames.empty(), ErrorKind::InconsistentAcquisition, "no frames to assemble");
  const auto& first = frames.front();
  for (const auto& f : frames) {
    if (f.patient_id != first.patient_id || f.series_uid != first.series_uid)
      fail(ErrorKind::InconsistentAcquisition, "frames mix patients or series ('" + f.patient_id + "' vs '" +
                                                   first.patient_id + "')");
    if (f.rows != first.rows || f.columns != first.columns)
      fail(ErrorKind::InconsistentAcquisition, "frames have differing dimensions");
  }

  std::vector<const DicomFrame*> order;
  for (const auto& f : frames) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(),
                   [](const DicomFrame* a, const DicomFrame* b) { return a->slice_location < b->slice_location; });

  std::vector<std::vector<const DicomFrame*>> slices;
  double cluster_start = 0.0;
  for (const auto* f : order) {
    if (slices.empty() || f->slice_location - cluster_start > config.location_tolerance_mm) {
      slices.emplace_back();
      cluster_start = f->slice_location;
    }
    slices.back().push_back(f);
  }

  const std::size_t frames_per_slice = slices.front().size();
  for (auto& s : slices) {
    if (s.size() != frames_per_slice)
      fail(ErrorKind::InconsistentAcquisition, "slice at " + std::to_string(s.front()->slice_location) + " mm has " +
                                                   std::to_string(s.size()) + " frames, expected " +
                                                   std::to_string(frames_per_slice));
    std::stable_sort(s.begin(), s.end(), [](const DicomFrame* a, const DicomFrame* b) {
      const double ta = a->acquisition_time.value_or(0.0);
      const double tb = b->acquisition_time.value_or(0.0);
      if (ta != tb) return ta < tb;
      return a->slice_location < b->slice_location;
    });
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i]->acquisition_time && s[i - 1]->acquisition_time && *s[i]->acquisition_time == *s[i - 1]->acquisition_time)
        fail(ErrorKind::Duplicate, "two frames at slice " + std::to_string(s[i]->slice_location) + " mm share time " +
                                       std::to_string(*s[i]->acquisition_time) + " s");
    }
  }

  VolumeGeometry g;
  g.frames = static_cast<int>(frames_per_slice);
  g.slices = static_cast<int>(slices.size());
  g.height = first.rows;
  g.width = first.columns;
  g.spacing = first.pixel_spacing ? static_cast<float>(*first.pixel_spacing) : config.default_spacing;
  g.thickness = first.slice_thickness ? static_cast<float>(*first.slice_thickness) : config.default_thickness;
  g.frame_interval = config.default_frame_interval;
  {
    const auto& s0 = slices.front();
    std::vector<double> deltas;
    for (std::size_t i = 1; i < s0.size(); ++i)
      if (s0[i]->acquisition_time && s0[i - 1]->acquisition_time)
        deltas.push_back(*s0[i]->acquisition_time - *s0[i - 1]->acquisition_time);
    if (!deltas.empty() && deltas.size() + 1 == s0.size()) {
      std::nth_element(deltas.begin(), deltas.begin() + deltas.size() / 2, deltas.end());
      const double median = deltas[deltas.size() / 2];
      if (median > 0.0) g.frame_interval = static_cast<float>(median);
    }
  }

  CtpVolume volume(first.patient_id, g);
  for (int s = 0; s < g.slices; ++s) {
    for (int t = 0; t < g.frames; ++t) {
      const DicomFrame& f = *slices[s][t];
      auto dst = volume.frame(t, s);
      for (int i = 0; i < g.height * g.width; ++i) dst.data()[i] = f.calibrated(i);
    }
  }
  volume.validate();
  return volume;
}

std::vector<DicomFrame> read_dicom_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::Io, "'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".dcm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<DicomFrame> frames;
  frames.reserve(files.size());
  for (const auto& p : files) frames.push_back(parse_dicom_file(io::read_file(p)));
  return frames;
}

}  // namespace perfuseg::dicom
