#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/labels.hpp"

namespace perfuseg {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

/// nullopt marks a zero denominator; such a value is reported as "undefined".
struct Scalars {
  std::optional<double> dice, sensitivity, specificity, precision, accuracy;
};

Scalars scalars(const Confusion& c);

/// One-vs-rest counts for class c over pixels whose truth is not background.
/// Both maps must be four-valued and aligned.
Confusion confusion(const LabelMap& pred, const LabelMap& truth, TissueClass c);
/// Binary counts, optionally restricted to pixels where `evaluated` is set.
Confusion binary_confusion(const Mask& pred, const Mask& truth, const Mask* evaluated = nullptr);
/// nullopt when both masks are empty.
std::optional<double> dice(const Mask& pred, const Mask& truth);

inline constexpr int kMaxBand = 128;

/// Distances |pred - target_c| of positive and negative pixels, binned by
/// ceil(distance); bin kMaxBand + 1 collects everything beyond the sweep.
/// A pixel counts as predicted positive at band w iff its bin is <= w.
struct BandHistogram {
  std::array<std::uint64_t, kMaxBand + 2> positives{};
  std::array<std::uint64_t, kMaxBand + 2> negatives{};

  std::uint64_t positive_total() const;
  std::uint64_t negative_total() const;
  BandHistogram& operator+=(const BandHistogram& o);
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

BandHistogram band_histogram(const LabelMap& pred, const LabelMap& truth, TissueClass c);
/// (0,0), then w = 0..128, then (1,1).
std::vector<RocPoint> roc_curve(const BandHistogram& h);
/// Trapezoid area under roc_curve. UndefinedMetric when the class has no
/// positive or no negative pixel.
double auc(const BandHistogram& h);
double auc_band_sweep(const LabelMap& pred, const LabelMap& truth, TissueClass c);

struct ClassMetrics {
  TissueClass cls = TissueClass::Brain;
  Confusion counts;
  Scalars values;
  std::optional<double> auc;
};

struct MetricReport {
  std::string group;  // patient id or fold name
  std::uint64_t evaluated = 0;
  std::vector<ClassMetrics> classes;

  const ClassMetrics& at(TissueClass c) const;
};

inline constexpr std::array<TissueClass, 3> kEvaluatedClasses = {TissueClass::Brain, TissueClass::Penumbra,
                                                                 TissueClass::Core};

/// Scalars only. UndefinedMetric when no pixel has non-background truth.
MetricReport confusion_and_scalars(const LabelMap& pred, const LabelMap& truth);

enum class Pooling { Pixels, SliceAverage };

/// Collects one patient's slices. `raw` is the continuous prediction used for
/// AUC, `classified` the four-valued map used for the scalars.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::string group = {}) : group_(std::move(group)) {}

  void add(const LabelMap& raw, const LabelMap& classified, const LabelMap& truth);
  MetricReport report(Pooling pooling = Pooling::Pixels) const;

 private:
  struct SliceStats {
    std::array<Confusion, 3> counts;
    std::array<BandHistogram, 3> bands;
  };
  std::string group_;
  std::vector<SliceStats> slices_;
};

/// Mean of every defined value across reports; classes keep their order.
MetricReport mean_report(const std::vector<MetricReport>& reports, std::string group);

/// Header "fold,class,dice,sens,spec,prec,acc,auc,pixels", one row per class.
std::string metrics_csv(const std::vector<MetricReport>& reports);

}  // namespace perfuseg
