#include "reseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "reseg/morphology.hpp"

namespace reseg {

double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

void project_gradient_box(const std::vector<double>& prob, std::vector<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (prob[i] <= 0.0 && grad[i] > 0.0) grad[i] = 0.0;
    if (prob[i] >= 1.0 && grad[i] < 0.0) grad[i] = 0.0;
  }
}

double volume_ratio_error(double v_s, double v_r, double epsilon_mm3) {
  return std::abs(v_s - v_r) / (v_s + v_r + epsilon_mm3);
}

double soft_volume_mm3(const VolumeGrid& prob, const BinaryMask& organ) {
  require_same_grid(prob.geometry(), organ.geometry(), "soft_volume_mm3");
  double acc = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    if (organ.test(i)) acc += prob[i];
  return acc * prob.geometry().voxel_volume_mm3();
}

LossResult volume_forgiving(const VolumeGrid& prob, const BinaryMask& organ,
                            std::optional<double> reported_volume_mm3,
                            const VolumeLossConfig& cfg) {
  require_same_grid(prob.geometry(), organ.geometry(), "volume_forgiving");
  const double voxel_vol = prob.geometry().voxel_volume_mm3();
  const double v_s = soft_volume_mm3(prob, organ);

  // Size-unknown reports only pin the volume to the plausible tumor range;
  // the substituted target is a constant, not a function of the prediction.
  const double v_r = reported_volume_mm3
                         ? *reported_volume_mm3
                         : std::clamp(v_s, cfg.v_min_mm3, cfg.v_max_mm3);

  const double raw = volume_ratio_error(v_s, v_r, cfg.epsilon_mm3);
  // A prediction off by the tolerated fraction of V_r incurs this much ratio
  // error; anything at or below it is forgiven.
  const double allowance = volume_ratio_error((1.0 - cfg.tolerance) * v_r, v_r, cfg.epsilon_mm3);

  LossResult res;
  res.grad.assign(prob.size(), 0.0);
  if (raw > allowance) {
    res.value = raw - allowance;
    const double delta = v_s - v_r;
    const double denom = v_s + v_r + cfg.epsilon_mm3;
    const double sign = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
    const double dldv = (sign * denom - std::abs(delta)) / (denom * denom);
    const double g = dldv * voxel_vol;
    for (std::size_t i = 0; i < prob.size(); ++i)
      if (organ.test(i)) res.grad[i] = g;
  }
  res.diag["V_s"] = v_s;
  res.diag["V_r"] = v_r;
  res.diag["band_active"] = raw > allowance ? 0.0 : 1.0;
  if (!std::isfinite(res.value)) throw Error("non-finite value in volume_forgiving");
  project_gradient_box(prob.data(), res.grad);
  return res;
}

LossResult background_suppression(const VolumeGrid& prob, const BinaryMask& organ) {
  require_same_grid(prob.geometry(), organ.geometry(), "background_suppression");
  const double n = static_cast<double>(prob.size());
  LossResult res;
  res.grad.assign(prob.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (organ.test(i)) continue;
    const double keep = 1.0 - prob[i];
    acc -= safe_log(keep);
    if (keep > kLogFloor) res.grad[i] = 1.0 / (n * keep);
  }
  res.value = acc / n;
  if (!std::isfinite(res.value)) throw Error("non-finite value in background_suppression");
  project_gradient_box(prob.data(), res.grad);
  return res;
}

LossResult volume_loss(const VolumeGrid& prob, const BinaryMask& organ,
                       std::optional<double> reported_volume_mm3, const VolumeLossConfig& cfg) {
  LossResult a = volume_forgiving(prob, organ, reported_volume_mm3, cfg);
  const LossResult b = background_suppression(prob, organ);
  a.diag["forgiving"] = a.value;
  a.diag["background"] = b.value;
  a.value += b.value;
  for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += b.grad[i];
  return a;
}

PseudoMask make_pseudo_mask(const std::vector<LocalizedTumor>& tumors, const BinaryMask& organ,
                            bool relax_negatives, const BallLossConfig& cfg) {
  PseudoMask pm;
  pm.geo = organ.geometry();
  pm.cls.assign(organ.size(), PseudoClass::ignore);
  if (!relax_negatives)
    for (std::size_t i = 0; i < organ.size(); ++i)
      if (organ.test(i)) pm.cls[i] = PseudoClass::negative;

  // Uncertainty shell around each carved tumor; sized by that tumor's own
  // inflated diameter so large tumors get proportionally wider margins.
  for (const auto& t : tumors) {
    if (t.voxels.empty()) continue;
    BinaryMask seed(organ.shape(), organ.spacing());
    for (std::size_t idx : t.voxels) seed.set(idx, true);
    const BinaryMask margin = dilate(seed, cfg.ignore_margin_factor * t.inflated_mm);
    for (std::size_t i = 0; i < organ.size(); ++i)
      if (margin.test(i) && organ.test(i)) pm.cls[i] = PseudoClass::ignore;
  }
  for (const auto& t : tumors)
    for (std::size_t idx : t.voxels) pm.cls[idx] = PseudoClass::positive;
  return pm;
}

LossResult pseudo_mask_loss(const VolumeGrid& prob, const PseudoMask& pm) {
  if (!(prob.geometry() == pm.geo)) throw Error("grid mismatch in pseudo_mask_loss");
  LossResult res;
  res.grad.assign(prob.size(), 0.0);

  double sum_p = 0.0, sum_g = 0.0, sum_pg = 0.0;
  double wsum = 0.0, wl = 0.0;
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (pm.cls[i] == PseudoClass::ignore) continue;
    ++n_valid;
    const double t = prob[i];
    const double g = pm.cls[i] == PseudoClass::positive ? 1.0 : 0.0;
    sum_p += t;
    sum_g += g;
    sum_pg += t * g;
    const double u = 0.5 + t;
    const double ll = g * safe_log(t) + (1.0 - g) * safe_log(1.0 - t);
    wsum += u;
    wl += u * ll;
  }
  if (n_valid == 0) return res;

  const double dice_den = sum_p + sum_g + kDiceEps;
  const double dice_num = 2.0 * sum_pg + kDiceEps;
  const double dice = 1.0 - dice_num / dice_den;
  const double wce = -wl / wsum;
  res.value = dice + wce;
  res.diag["dice"] = dice;
  res.diag["wce"] = wce;

  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (pm.cls[i] == PseudoClass::ignore) continue;
    const double t = prob[i];
    const double g = pm.cls[i] == PseudoClass::positive ? 1.0 : 0.0;
    // dice term
    double grad = -(2.0 * g * dice_den - dice_num) / (dice_den * dice_den);
    // weighted CE; the (0.5 + t) weights are part of the function, so they
    // are differentiated through as well
    const double u = 0.5 + t;
    const double ll = g * safe_log(t) + (1.0 - g) * safe_log(1.0 - t);
    double dll = 0.0;
    if (g > 0.5) {
      if (t > kLogFloor) dll = 1.0 / t;
    } else {
      if (1.0 - t > kLogFloor) dll = -1.0 / (1.0 - t);
    }
    grad += -(ll + u * dll) / wsum - wce / wsum;
    res.grad[i] = grad;
  }
  if (!std::isfinite(res.value)) throw Error("non-finite value in pseudo_mask_loss");
  project_gradient_box(prob.data(), res.grad);
  return res;
}

LossResult ball_loss(const VolumeGrid& prob, const BinaryMask& organ,
                     const std::vector<TumorFinding>& findings, bool count_known,
                     const BallLossConfig& cfg) {
  require_same_grid(prob.geometry(), organ.geometry(), "ball_loss");
  if (findings.empty()) {
    // Tumor-free organ: push every organ voxel toward zero, unweighted.
    LossResult res;
    res.grad.assign(prob.size(), 0.0);
    const std::size_t n = organ.count();
    if (n == 0) return res;
    double acc = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
      if (!organ.test(i)) continue;
      const double keep = 1.0 - prob[i];
      acc -= safe_log(keep);
      if (keep > kLogFloor) res.grad[i] = 1.0 / (static_cast<double>(n) * keep);
    }
    res.value = acc / static_cast<double>(n);
    if (!std::isfinite(res.value)) throw Error("non-finite value in ball_loss");
    project_gradient_box(prob.data(), res.grad);
    return res;
  }

  // A reported slice that misses the organ entirely makes that finding
  // unlocatable. Findings whose gate survives are kept; if none do, the
  // organ's positive term is skipped for this step rather than aborting the
  // batch over one noisy annotation.
  std::vector<TumorFinding> feasible;
  std::size_t dropped = 0;
  for (const auto& f : findings) {
    if (f.slice) {
      const double d = f.diameters_mm.empty() ? kMinTumorDiameterMm : f.diameters_mm[0];
      if (gate_slices(organ, {{*f.slice, d}}).count() == 0) {
        ++dropped;
        continue;
      }
    }
    feasible.push_back(f);
  }
  if (feasible.empty()) {
    LossResult res;
    res.grad.assign(prob.size(), 0.0);
    res.diag["infeasible_findings"] = static_cast<double>(dropped);
    return res;
  }

  const auto tumors = localize_tumors(prob, organ, feasible, cfg.localize);
  bool any_unsized = false;
  for (const auto& f : feasible) any_unsized |= f.diameters_mm.empty();
  // With the count open, a size missing, or a finding dropped, organ voxels
  // outside the carved balls might still be tumor; only the carved positives
  // stay supervised.
  const bool relax = !count_known || any_unsized || dropped > 0;
  const PseudoMask pm = make_pseudo_mask(tumors, organ, relax, cfg);
  LossResult res = pseudo_mask_loss(prob, pm);
  if (dropped > 0) res.diag["infeasible_findings"] = static_cast<double>(dropped);
  return res;
}

LossResult supervised_loss(const VolumeGrid& prob, const BinaryMask& gt) {
  require_same_grid(prob.geometry(), gt.geometry(), "supervised_loss");
  LossResult res;
  res.grad.assign(prob.size(), 0.0);
  const double n = static_cast<double>(prob.size());

  double sum_p = 0.0, sum_g = 0.0, sum_pg = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double t = prob[i];
    const double g = gt.test(i) ? 1.0 : 0.0;
    sum_p += t;
    sum_g += g;
    sum_pg += t * g;
    bce -= g * safe_log(t) + (1.0 - g) * safe_log(1.0 - t);
  }
  const double dice_den = sum_p + sum_g + kDiceEps;
  const double dice_num = 2.0 * sum_pg + kDiceEps;
  res.value = 1.0 - dice_num / dice_den + bce / n;

  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double t = prob[i];
    const double g = gt.test(i) ? 1.0 : 0.0;
    double grad = -(2.0 * g * dice_den - dice_num) / (dice_den * dice_den);
    if (g > 0.5) {
      if (t > kLogFloor) grad -= 1.0 / (t * n);
    } else {
      if (1.0 - t > kLogFloor) grad += 1.0 / ((1.0 - t) * n);
    }
    res.grad[i] = grad;
  }
  if (!std::isfinite(res.value)) throw Error("non-finite value in supervised_loss");
  project_gradient_box(prob.data(), res.grad);
  return res;
}

}  // namespace reseg
