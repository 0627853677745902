#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "reseg/grid.hpp"

namespace reseg {

struct DetectionThresholds {
  double confidence = 0.5;
  int voxel_count = 50;  // strictly more than this many voxels must exceed confidence
};

// An organ is flagged tumor-positive when strictly more than `voxel_count`
// voxels inside the organ have probability strictly above `confidence`.
bool detect(const VolumeGrid& prob, const BinaryMask& organ, const DetectionThresholds& thr);

struct DetectionCounts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;

  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted && !actual) ++fp;
    else if (!predicted && actual) ++fn;
    else ++tn;
  }
};

// Ratios are NaN when their denominator is zero; aggregation skips NaN.
struct DetectionMetrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
};
DetectionMetrics detection_metrics(const DetectionCounts& c);

struct OverlapMetrics {
  double dsc = 0.0;
  double nsd = 0.0;
  bool degenerate = false;  // both masks empty; dsc/nsd reported as 1
};

// Dice plus normalized surface distance. Surfaces are 6-neighborhood boundary
// voxels; distances are exact Euclidean between voxel centers, and a surface
// point counts as matched when within tolerance_mm of the other surface.
OverlapMetrics dsc_nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm = 2.0);

struct OrganEvalRow {
  std::string organ;
  DetectionCounts counts;
  DetectionMetrics metrics;
  double dsc_mean = std::numeric_limits<double>::quiet_NaN();
  double nsd_mean = std::numeric_limits<double>::quiet_NaN();
};

// Mean of per-organ F1 over organs where F1 is defined.
double macro_f1(const std::vector<OrganEvalRow>& rows);

// Fixed column order shared by cmd_eval outputs and tests.
void write_eval_csv(const std::string& path, const std::vector<OrganEvalRow>& rows);

}  // namespace reseg
