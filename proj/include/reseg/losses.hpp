#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reseg/ballconv.hpp"
#include "reseg/grid.hpp"
#include "reseg/report.hpp"

namespace reseg {

// Every loss returns its scalar value and the gradient w.r.t. the probability
// map it was given. Gradients are box-projected at the [0,1] probability
// bounds, which keeps the invariant that a loss with value exactly 0 has an
// all-zero gradient. `diag` carries named scalars (segmented volume, band
// state, per-term values) for logging; it never feeds back into training.
struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
  std::map<std::string, double> diag;
};

// log terms are clamped away from the singular end only, so ln(1)=0 stays
// exact: log(max(x, kLogFloor)).
inline constexpr double kLogFloor = 1e-6;
inline constexpr double kDiceEps = 1e-5;

double safe_log(double x);

// Zeroes gradient components that point outside [0,1] at voxels already
// sitting on the bound.
void project_gradient_box(const std::vector<double>& prob, std::vector<double>& grad);

struct VolumeLossConfig {
  double epsilon_mm3 = 500.0;   // smoothing constant in the ratio error
  double tolerance = 0.10;      // relative deviation forgiven around V_r
  double v_min_mm3 = 65.0;      // size prior bounds for size-unknown reports
  double v_max_mm3 = 904779.0;
};

// Smoothed relative volume error: |V_s - V_r| / (V_s + V_r + eps).
double volume_ratio_error(double v_s, double v_r, double epsilon_mm3);

// Soft segmented volume V_s = voxel_volume * sum(t * o), in mm^3.
double soft_volume_mm3(const VolumeGrid& prob, const BinaryMask& organ);

// Hinged volume term: ratio error minus the error a (1-tolerance)*V_r
// prediction would incur, floored at 0. Size-unknown reports substitute
// V_r = clamp(V_s, v_min, v_max), held constant for the gradient.
LossResult volume_forgiving(const VolumeGrid& prob, const BinaryMask& organ,
                            std::optional<double> reported_volume_mm3,
                            const VolumeLossConfig& cfg = {});

// Mean -ln(1 - t) outside the organ; pushes probability mass out of
// unannotated background. Normalized by the full patch voxel count.
LossResult background_suppression(const VolumeGrid& prob, const BinaryMask& organ);

// volume_forgiving + background_suppression.
LossResult volume_loss(const VolumeGrid& prob, const BinaryMask& organ,
                       std::optional<double> reported_volume_mm3,
                       const VolumeLossConfig& cfg = {});

// Per-voxel supervision classes derived from localization.
enum class PseudoClass : std::uint8_t { negative = 0, positive = 1, ignore = 2 };

struct PseudoMask {
  GridGeometry geo;
  std::vector<PseudoClass> cls;

  std::size_t count(PseudoClass c) const {
    std::size_t n = 0;
    for (auto v : cls) n += (v == c);
    return n;
  }
};

struct BallLossConfig {
  LocalizeConfig localize;
  double ignore_margin_factor = 0.20;  // margin radius as a fraction of the inflated diameter
};

// Pseudo-mask construction for one organ: carved tumor voxels become
// positives, a small shell around each tumor is ignored, the rest of the
// organ is negative. When the report leaves the tumor count open or any
// finding unsized, in-organ negatives are relaxed to ignore. Voxels outside
// the organ are always ignore (they belong to the volume loss).
PseudoMask make_pseudo_mask(const std::vector<LocalizedTumor>& tumors, const BinaryMask& organ,
                            bool relax_negatives, const BallLossConfig& cfg = {});

// Dice plus self-weighted cross-entropy against a pseudo-mask; ignore voxels
// participate in neither term. CE voxel weights are (0.5 + t), normalized,
// and the weights are differentiated through.
LossResult pseudo_mask_loss(const VolumeGrid& prob, const PseudoMask& pm);

// Full report-driven ball loss for one organ channel. Tumor-free organs get
// plain mean cross-entropy toward zero over the organ region (no dice).
LossResult ball_loss(const VolumeGrid& prob, const BinaryMask& organ,
                     const std::vector<TumorFinding>& findings, bool count_known,
                     const BallLossConfig& cfg = {});

// Soft dice + mean binary cross-entropy against a voxel mask, over the whole
// patch. Used when ground-truth tumor masks are available.
LossResult supervised_loss(const VolumeGrid& prob, const BinaryMask& gt);

}  // namespace reseg
