#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perfuseg/volume.hpp"

namespace perfuseg::dicom {

inline constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

/// The subset of one CT image needed to assemble a perfusion volume.
struct DicomFrame {
  int rows = 0;
  int columns = 0;
  std::vector<std::uint16_t> stored;  // raw 16-bit stored values, row-major
  bool signed_pixels = false;         // PixelRepresentation == 1
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  double slice_location = 0.0;              // mm
  std::optional<double> acquisition_time;   // seconds since midnight
  std::optional<double> pixel_spacing;      // mm (row spacing)
  std::optional<double> slice_thickness;    // mm
  std::string patient_id;
  std::string series_uid;

  /// stored value * slope + intercept.
  float calibrated(std::size_t index) const;

  bool operator==(const DicomFrame&) const = default;
};

/// Parses an Explicit VR Little Endian Part-10 file. Other transfer syntaxes
/// raise ErrorKind::Unsupported.
DicomFrame parse_dicom_file(std::span<const std::uint8_t> bytes);

/// Test-fixture writer producing the same minimal Part-10 layout the parser
/// accepts.
std::vector<std::uint8_t> serialize_dicom_file(const DicomFrame& frame);

/// "HHMMSS.FFFFFF" <-> seconds since midnight.
double parse_dicom_time(const std::string& tm);
std::string format_dicom_time(double seconds);

struct AssembleConfig {
  double location_tolerance_mm = 0.5;
  float default_frame_interval = 1.0f;
  float default_spacing = 0.4258f;
  float default_thickness = 5.0f;
};

/// Groups frames into slices by location and orders each slice by acquisition
/// time; the result is independent of input order.
CtpVolume assemble_volume(const std::vector<DicomFrame>& frames, const AssembleConfig& config = {});

/// Parses every *.dcm file below a directory (sorted by path).
std::vector<DicomFrame> read_dicom_directory(const std::filesystem::path& dir);

}  // namespace perfuseg::dicom
