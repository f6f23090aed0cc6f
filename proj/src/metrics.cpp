#include "perfuseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "perfuseg/error.hpp"

namespace perfuseg {

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_aligned(const LabelMap& pred, const LabelMap& truth) {
  require(pred.height() == truth.height() && pred.width() == truth.width(), ErrorKind::Alignment,
          "prediction is " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) + " but truth is " +
              std::to_string(truth.height()) + "x" + std::to_string(truth.width()));
}

std::size_t class_slot(TissueClass c) {
  for (std::size_t i = 0; i < kEvaluatedClasses.size(); ++i)
    if (kEvaluatedClasses[i] == c) return i;
  fail(ErrorKind::Usage, "background is not an evaluated class");
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

Scalars scalars(const Confusion& c) {
  Scalars s;
  s.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  s.sensitivity = ratio(c.tp, c.tp + c.fn);
  s.specificity = ratio(c.tn, c.tn + c.fp);
  s.precision = ratio(c.tp, c.tp + c.fp);
  s.accuracy = ratio(c.tp + c.tn, c.total());
  return s;
}

Confusion confusion(const LabelMap& pred, const LabelMap& truth, TissueClass c) {
  check_aligned(pred, truth);
  pred.validate_ground_truth();
  truth.validate_ground_truth();
  const float target = target_value(c);
  const float background = target_value(TissueClass::Background);
  Confusion out;
  for (Eigen::Index i = 0; i < truth.pixels.size(); ++i) {
    const float t = truth.pixels.data()[i];
    if (t == background) continue;
    const bool p = pred.pixels.data()[i] == target;
    const bool g = t == target;
    if (p && g) ++out.tp;
    else if (p) ++out.fp;
    else if (g) ++out.fn;
    else ++out.tn;
  }
  return out;
}

Confusion binary_confusion(const Mask& pred, const Mask& truth, const Mask* evaluated) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), ErrorKind::Alignment,
          "binary masks differ in size");
  if (evaluated)
    require(evaluated->rows() == truth.rows() && evaluated->cols() == truth.cols(), ErrorKind::Alignment,
            "evaluation mask differs in size");
  Confusion out;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    if (evaluated && !evaluated->data()[i]) continue;
    const bool p = pred.data()[i] != 0;
    const bool g = truth.data()[i] != 0;
    if (p && g) ++out.tp;
    else if (p) ++out.fp;
    else if (g) ++out.fn;
    else ++out.tn;
  }
  return out;
}

std::optional<double> dice(const Mask& pred, const Mask& truth) { return scalars(binary_confusion(pred, truth)).dice; }

std::uint64_t BandHistogram::positive_total() const {
  std::uint64_t n = 0;
  for (auto v : positives) n += v;
  return n;
}

std::uint64_t BandHistogram::negative_total() const {
  std::uint64_t n = 0;
  for (auto v : negatives) n += v;
  return n;
}

BandHistogram& BandHistogram::operator+=(const BandHistogram& o) {
  for (std::size_t i = 0; i < positives.size(); ++i) {
    positives[i] += o.positives[i];
    negatives[i] += o.negatives[i];
  }
  return *this;
}

BandHistogram band_histogram(const LabelMap& pred, const LabelMap& truth, TissueClass c) {
  check_aligned(pred, truth);
  truth.validate_ground_truth();
  const float target = target_value(c);
  const float background = target_value(TissueClass::Background);
  BandHistogram h;
  for (Eigen::Index i = 0; i < truth.pixels.size(); ++i) {
    const float t = truth.pixels.data()[i];
    if (t == background) continue;
    const float p = pred.pixels.data()[i];
    require(p >= 0.0f && p <= 255.0f, ErrorKind::Validation,
            "prediction value " + std::to_string(p) + " outside [0, 255]");
    const double d = std::ceil(std::abs(static_cast<double>(p) - target));
    const auto bin = static_cast<std::size_t>(std::min<double>(d, kMaxBand + 1));
    (t == target ? h.positives : h.negatives)[bin]++;
  }
  return h;
}

std::vector<RocPoint> roc_curve(const BandHistogram& h) {
  const auto pos = h.positive_total();
  const auto neg = h.negative_total();
  require(pos > 0, ErrorKind::UndefinedMetric, "AUC undefined: class absent from the truth");
  require(neg > 0, ErrorKind::UndefinedMetric, "AUC undefined: no negative pixels");
  std::vector<RocPoint> out{{0.0, 0.0}};
  std::uint64_t tp = 0, fp = 0;
  for (int w = 0; w <= kMaxBand; ++w) {
    tp += h.positives[w];
    fp += h.negatives[w];
    out.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  out.push_back({1.0, 1.0});
  return out;
}

double auc(const BandHistogram& h) {
  const auto roc = roc_curve(h);
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  return area;
}

double auc_band_sweep(const LabelMap& pred, const LabelMap& truth, TissueClass c) {
  return auc(band_histogram(pred, truth, c));
}

const ClassMetrics& MetricReport::at(TissueClass c) const {
  for (const auto& m : classes)
    if (m.cls == c) return m;
  fail(ErrorKind::Usage, "class " + std::string(to_string(c)) + " not in report");
}

MetricReport confusion_and_scalars(const LabelMap& pred, const LabelMap& truth) {
  MetricReport r;
  for (auto c : kEvaluatedClasses) {
    ClassMetrics m;
    m.cls = c;
    m.counts = confusion(pred, truth, c);
    m.values = scalars(m.counts);
    r.evaluated = m.counts.total();
    r.classes.push_back(m);
  }
  require(r.evaluated > 0, ErrorKind::UndefinedMetric, "empty evaluation set: every truth pixel is background");
  return r;
}

void MetricAccumulator::add(const LabelMap& raw, const LabelMap& classified, const LabelMap& truth) {
  SliceStats s;
  for (auto c : kEvaluatedClasses) {
    const auto k = class_slot(c);
    s.counts[k] = confusion(classified, truth, c);
    s.bands[k] = band_histogram(raw, truth, c);
  }
  slices_.push_back(s);
}

MetricReport MetricAccumulator::report(Pooling pooling) const {
  MetricReport r;
  r.group = group_;
  for (auto c : kEvaluatedClasses) {
    const auto k = class_slot(c);
    ClassMetrics m;
    m.cls = c;
    BandHistogram bands;
    for (const auto& s : slices_) {
      m.counts += s.counts[k];
      bands += s.bands[k];
    }
    if (pooling == Pooling::Pixels) {
      m.values = scalars(m.counts);
      if (bands.positive_total() > 0 && bands.negative_total() > 0) m.auc = auc(bands);
    } else {
      std::vector<MetricReport> per_slice;
      for (const auto& s : slices_) {
        if (s.counts[k].total() == 0) continue;
        MetricReport one;
        ClassMetrics cm;
        cm.cls = c;
        cm.counts = s.counts[k];
        cm.values = scalars(cm.counts);
        if (s.bands[k].positive_total() > 0 && s.bands[k].negative_total() > 0) cm.auc = auc(s.bands[k]);
        one.classes.push_back(cm);
        per_slice.push_back(one);
      }
      if (!per_slice.empty()) {
        const auto mean = mean_report(per_slice, group_);
        m.values = mean.classes[0].values;
        m.auc = mean.classes[0].auc;
      }
    }
    r.evaluated = m.counts.total();
    r.classes.push_back(m);
  }
  require(r.evaluated > 0, ErrorKind::UndefinedMetric, "empty evaluation set for " + group_);
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports, std::string group) {
  require(!reports.empty(), ErrorKind::UndefinedMetric, "no reports to average");
  MetricReport out;
  out.group = std::move(group);
  const auto n_classes = reports.front().classes.size();
  for (std::size_t k = 0; k < n_classes; ++k) {
    ClassMetrics m;
    m.cls = reports.front().classes[k].cls;
    auto average = [&](auto field) {
      double sum = 0.0;
      int n = 0;
      for (const auto& r : reports) {
        const auto& v = field(r.classes.at(k));
        if (v) {
          sum += *v;
          ++n;
        }
      }
      return n ? std::optional<double>(sum / n) : std::nullopt;
    };
    m.values.dice = average([](const ClassMetrics& c) { return c.values.dice; });
    m.values.sensitivity = average([](const ClassMetrics& c) { return c.values.sensitivity; });
    m.values.specificity = average([](const ClassMetrics& c) { return c.values.specificity; });
    m.values.precision = average([](const ClassMetrics& c) { return c.values.precision; });
    m.values.accuracy = average([](const ClassMetrics& c) { return c.values.accuracy; });
    m.auc = average([](const ClassMetrics& c) { return c.auc; });
    for (const auto& r : reports) m.counts += r.classes.at(k).counts;
    out.classes.push_back(m);
  }
  for (const auto& r : reports) out.evaluated += r.evaluated;
  return out;
}

std::string metrics_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << "fold,class,dice,sens,spec,prec,acc,auc,pixels\n";
  for (const auto& r : reports)
    for (const auto& m : r.classes)
      out << r.group << ',' << to_string(m.cls) << ',' << cell(m.values.dice) << ',' << cell(m.values.sensitivity) << ','
          << cell(m.values.specificity) << ',' << cell(m.values.precision) << ',' << cell(m.values.accuracy) << ','
          << cell(m.auc) << ',' << m.counts.total() << '\n';
  return out.str();
}

}  // namespace perfuseg
