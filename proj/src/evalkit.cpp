#include "reseg/evalkit.hpp"

#include <cmath>
#include <limits>

#include "reseg/csvio.hpp"
#include "reseg/morphology.hpp"

namespace reseg {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

bool detect(const VolumeGrid& prob, const BinaryMask& organ, const DetectionThresholds& thr) {
  require_same_grid(prob.geometry(), organ.geometry(), "detect");
  long long over = 0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    if (organ.test(i) && prob[i] > thr.confidence) ++over;
  // Both comparisons are strict: "more than N voxels above the confidence".
  return over > thr.voxel_count;
}

DetectionMetrics detection_metrics(const DetectionCounts& c) {
  DetectionMetrics m;
  m.sensitivity = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : kNaN;
  m.specificity = (c.tn + c.fp) > 0 ? static_cast<double>(c.tn) / (c.tn + c.fp) : kNaN;
  const long long f1_den = 2 * c.tp + c.fp + c.fn;
  m.f1 = f1_den > 0 ? 2.0 * c.tp / static_cast<double>(f1_den) : kNaN;
  return m;
}

OverlapMetrics dsc_nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm) {
  require_same_grid(pred.geometry(), gt.geometry(), "dsc_nsd");
  OverlapMetrics m;

  std::size_t np = 0, ng = 0, ni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.test(i), g = gt.test(i);
    np += p;
    ng += g;
    ni += (p && g);
  }
  if (np == 0 && ng == 0) {
    // Nothing to segment and nothing segmented; perfect by convention but
    // flagged so aggregations can treat it separately.
    m.dsc = 1.0;
    m.nsd = 1.0;
    m.degenerate = true;
    return m;
  }
  m.dsc = 2.0 * static_cast<double>(ni) / (static_cast<double>(np) + ng);

  const BinaryMask bp = boundary_voxels(pred);
  const BinaryMask bg = boundary_voxels(gt);
  const std::size_t nbp = bp.count(), nbg = bg.count();
  if (nbp == 0 || nbg == 0) {
    // One side has no surface at all; no part of either surface is matched.
    m.nsd = 0.0;
    return m;
  }
  const auto d2_to_gt = squared_distance_mm2(bg);
  const auto d2_to_pred = squared_distance_mm2(bp);
  const double tol2 = tolerance_mm * tolerance_mm;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (bp.test(i) && d2_to_gt[i] <= tol2) ++hit;
    if (bg.test(i) && d2_to_pred[i] <= tol2) ++hit;
  }
  m.nsd = static_cast<double>(hit) / static_cast<double>(nbp + nbg);
  return m;
}

double macro_f1(const std::vector<OrganEvalRow>& rows) {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (std::isnan(r.metrics.f1)) continue;
    acc += r.metrics.f1;
    ++n;
  }
  return n > 0 ? acc / n : kNaN;
}

void write_eval_csv(const std::string& path, const std::vector<OrganEvalRow>& rows) {
  CsvWriter csv(path, {"organ", "TP", "FP", "TN", "FN", "sens", "spec", "f1", "dsc_mean",
                       "nsd_mean"});
  for (const auto& r : rows) {
    csv.write_row({r.organ, r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn,
                   r.metrics.sensitivity, r.metrics.specificity, r.metrics.f1, r.dsc_mean,
                   r.nsd_mean});
  }
}

}  // namespace reseg
