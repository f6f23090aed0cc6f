#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "perfuseg/image.hpp"

namespace perfuseg {

/// Tissue classes of the ground-truth encoding. The enumerator order is also
/// the index order of classifier probability vectors.
enum class TissueClass : std::uint8_t { Background = 0, Brain = 1, Penumbra = 2, Core = 3 };

inline constexpr std::array<TissueClass, 4> kAllClasses = {TissueClass::Background, TissueClass::Brain,
                                                           TissueClass::Penumbra, TissueClass::Core};

/// Grayscale target: Background 255, Brain 0, Penumbra 76, Core 150.
constexpr std::uint8_t target_value(TissueClass c) {
  switch (c) {
    case TissueClass::Background: return 255;
    case TissueClass::Brain: return 0;
    case TissueClass::Penumbra: return 76;
    case TissueClass::Core: return 150;
  }
  return 255;
}

constexpr std::optional<TissueClass> class_from_target(int value) {
  switch (value) {
    case 255: return TissueClass::Background;
    case 0: return TissueClass::Brain;
    case 76: return TissueClass::Penumbra;
    case 150: return TissueClass::Core;
    default: return std::nullopt;
  }
}

/// Clinical severity used for tie-breaking: Core > Penumbra > Brain > Background.
constexpr int severity(TissueClass c) {
  switch (c) {
    case TissueClass::Core: return 3;
    case TissueClass::Penumbra: return 2;
    case TissueClass::Brain: return 1;
    case TissueClass::Background: return 0;
  }
  return 0;
}

std::string_view to_string(TissueClass c);
std::optional<TissueClass> class_from_name(std::string_view name);

/// Per-slice segmentation image. Ground truth holds only the four target
/// values; raw predictions may hold any value in [0, 255].
struct LabelMap {
  int slice_index = 0;
  ImageF pixels;

  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }

  bool is_four_valued() const;

  /// Throws LabelEncoding when any pixel is not one of {0, 76, 150, 255}.
  void validate_ground_truth() const;

  Image<std::uint8_t> to_bytes() const;
  static LabelMap from_bytes(int slice_index, const Image<std::uint8_t>& bytes);
};

}  // namespace perfuseg
