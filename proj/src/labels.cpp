#include "perfuseg/labels.hpp"

#include <cmath>
#include <string>

#include "perfuseg/error.hpp"

namespace perfuseg {

std::string_view to_string(TissueClass c) {
  switch (c) {
    case TissueClass::Background: return "background";
    case TissueClass::Brain: return "brain";
    case TissueClass::Penumbra: return "penumbra";
    case TissueClass::Core: return "core";
  }
  return "background";
}

std::optional<TissueClass> class_from_name(std::string_view name) {
  for (auto c : kAllClasses)
    if (to_string(c) == name) return c;
  return std::nullopt;
}

bool LabelMap::is_four_valued() const {
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const float v = pixels.data()[i];
    if (v != std::round(v) || !class_from_target(static_cast<int>(v))) return false;
  }
  return true;
}

void LabelMap::validate_ground_truth() const {
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const float v = pixels.data()[i];
    if (v != std::round(v) || !class_from_target(static_cast<int>(v)))
      fail(ErrorKind::LabelEncoding, "slice " + std::to_string(slice_index) + " pixel " + std::to_string(i) +
                                         " has value " + std::to_string(v) + ", expected one of {0, 76, 150, 255}");
  }
}

Image<std::uint8_t> LabelMap::to_bytes() const {
  Image<std::uint8_t> out(pixels.rows(), pixels.cols());
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const float v = pixels.data()[i];
    require(v >= 0.0f && v <= 255.0f, ErrorKind::Validation, "label value out of [0, 255]");
    // half away from zero; values are nonnegative so floor(v + 0.5) suffices
    out.data()[i] = static_cast<std::uint8_t>(std::floor(v + 0.5f));
  }
  return out;
}

LabelMap LabelMap::from_bytes(int slice_index, const Image<std::uint8_t>& bytes) {
  LabelMap map;
  map.slice_index = slice_index;
  map.pixels = bytes.cast<float>();
  return map;
}

}  // namespace perfuseg
