#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

enum class MapKind { Ttp, Cbv, Cbf, Tmax, Rcbv, Rcbf };

std::string_view to_string(MapKind kind);
constexpr bool is_relative(MapKind k) { return k == MapKind::Rcbv || k == MapKind::Rcbf; }

/// Perfusion maps of one slice. Invalid pixels (outside the brain mask, or
/// with a flat curve) hold NaN in every map except CBV/CBF, which are 0 for
/// flat curves.
struct SliceMaps {
  ImageF ttp;   // s
  ImageF cbv;   // area under the baseline-subtracted curve
  ImageF cbf;   // steepest discrete upslope per second
  ImageF tmax;  // s, TTP minus the arterial reference TTP
  ImageF rcbv;  // % of contralateral median
  ImageF rcbf;
  Mask valid;
  bool relative_available = true;
  float arterial_ttp = 0.0f;

  const ImageF& map(MapKind kind) const;
  ImageF& map(MapKind kind);
  int height() const { return static_cast<int>(valid.rows()); }
  int width() const { return static_cast<int>(valid.cols()); }
};

struct ParametricMaps {
  std::vector<SliceMaps> slices;
};

struct MapConfig {
  int baseline_frames = 3;        // pre-bolus frames averaged for the baseline
  double arterial_fraction = 0.01;
  double flat_tolerance = 1e-6;   // max - min at or below this flags the pixel
};

/// Maps of every slice; `masks` holds one brain mask per slice.
ParametricMaps compute_maps(const CtpVolume& volume, const std::vector<Mask>& masks, const MapConfig& config = {});
SliceMaps compute_slice_maps(const CtpVolume& volume, int slice, const Mask& mask, const MapConfig& config = {});

/// Median of the valid pixels strictly left / right of the vertical midline.
/// Pixels of an odd width's centre column are normalized by the left median.
void fill_relative_maps(SliceMaps& maps);

enum class RuleId { WintermarkCore, CampbellPenumbra, CampbellCore, CeredaPenumbra, CeredaCore, MaLinPenumbra, MaLinCore };

enum class Comparison { Less, Greater };

struct RuleClause {
  MapKind map;
  Comparison op;
  double threshold;
};

struct ThresholdRule {
  RuleId id;
  std::string name;
  std::string citation;
  bool penumbra = false;  // false: the rule outlines the core
  std::vector<RuleClause> clauses;  // conjunction
};

inline constexpr std::array<RuleId, 7> kAllRules = {RuleId::WintermarkCore, RuleId::CampbellPenumbra,
                                                    RuleId::CampbellCore,   RuleId::CeredaPenumbra,
                                                    RuleId::CeredaCore,     RuleId::MaLinPenumbra,
                                                    RuleId::MaLinCore};

const ThresholdRule& rule(RuleId id);
/// Accepts the snake_case id, e.g. "campbell_core". Config error otherwise.
const ThresholdRule& rule_from_name(std::string_view name);

/// 1 where every clause holds on a valid pixel. Evaluation error when a clause
/// needs relative maps that are unavailable or a map is missing.
Mask apply_rule(const SliceMaps& maps, const ThresholdRule& rule);
std::vector<Mask> apply_rule(const ParametricMaps& maps, const ThresholdRule& rule);

}  // namespace perfuseg
