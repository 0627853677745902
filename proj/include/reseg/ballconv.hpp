#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "reseg/grid.hpp"
#include "reseg/report.hpp"

namespace reseg {

enum class ConvBackend { direct, fft };

// Ball-shaped matching kernel. Weight is 1 at the center, falls off as a
// Gaussian in metric distance between voxel centers, and is exactly 0 outside
// the inscribed ball of the given diameter. Kernel sides are odd so the
// center voxel is unambiguous.
struct BallKernel {
  double diameter_mm = 0.0;
  Shape3 size{1, 1, 1};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<double> weights;  // same (h,w,l) row-major layout as volumes

  double at(int h, int w, int l) const {
    return weights[(static_cast<std::size_t>(h) * size[1] + w) * size[2] + l];
  }

  // sigma = sigma_factor * diameter (the default ties spread to the full ball
  // width; pass sigma_on_radius=true to tie it to the radius instead).
  static BallKernel make(double diameter_mm, Spacing3 spacing, double sigma_factor = 0.75,
                         bool sigma_on_radius = false);
};

// Same-size correlation with zero padding, stride 1. Both backends accumulate
// in double; they are independent implementations kept for cross-checking.
VolumeGrid ball_convolve(const VolumeGrid& vol, const BallKernel& kernel,
                         ConvBackend backend = ConvBackend::direct);

struct LocalizedTumor {
  Index3 center{0, 0, 0};
  double diameter_mm = 0.0;        // uninflated working diameter
  double inflated_mm = 0.0;        // diameter after safety inflation
  std::size_t target_voxels = 0;   // carve budget before capacity clamping
  std::vector<std::size_t> voxels; // carved voxel indices
  bool size_reported = true;
  bool capacity_clamped = false;   // carve budget hit ball/mask capacity
};

struct LocalizeConfig {
  double inflation = 0.30;         // widens both the kernel and the carve ball
  double sigma_factor = 0.75;
  bool sigma_on_radius = false;
  ConvBackend backend = ConvBackend::direct;
};

// Greedy matched-filter localization of the reported tumors inside one organ.
// Findings are processed largest-first; each round convolves the remaining
// response, takes the best in-mask position, carves that tumor's voxels out,
// and repeats. Slice-gated findings restrict their own search region only.
std::vector<LocalizedTumor> localize_tumors(const VolumeGrid& prob, const BinaryMask& organ,
                                            const std::vector<TumorFinding>& findings,
                                            const LocalizeConfig& cfg = {});

// Indices of the n highest-response voxels within the ball of the given
// diameter around `center`, intersected with `allowed` when provided. Ties
// break toward the lower row-major index. Returns fewer than n only when the
// region is smaller than n (reported through `clamped`).
std::vector<std::size_t> carve_top_n(const VolumeGrid& response, Index3 center, double diameter_mm,
                                     std::size_t n, const BinaryMask* allowed = nullptr,
                                     bool* clamped = nullptr);

}  // namespace reseg
