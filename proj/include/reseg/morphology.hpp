#pragma once

#include <vector>

#include "reseg/grid.hpp"

namespace reseg {

// Exact squared Euclidean distance (in mm^2) from every voxel to the nearest
// set voxel of `src`, honoring anisotropic spacing. Voxels inside `src` get 0.
// Distances are measured between voxel centers. If the mask is empty, every
// entry is +infinity.
std::vector<double> squared_distance_mm2(const BinaryMask& src);

// True Euclidean dilation: voxel is set iff its center lies within
// `radius_mm` of the center of some voxel in `src`.
BinaryMask dilate(const BinaryMask& src, double radius_mm);

// One gate per reported tumor: keep slice h iff |h - z| * spacing_h <=
// diameter_mm for at least one gate. No gates means no restriction.
struct SliceGate {
  int z = 0;           // slice index along H
  double diameter_mm = 0.0;
};
BinaryMask gate_slices(const BinaryMask& src, const std::vector<SliceGate>& gates);

// 6- or 26-connected components, labeled 1..count in first-encounter
// (row-major) order.
struct ComponentLabels {
  LabelVolume labels;
  int count = 0;
};
ComponentLabels connected_components(const BinaryMask& src, int connectivity = 6);

// Boundary voxels of a mask: set voxels with at least one 6-neighbor outside
// the mask (volume border counts as outside).
BinaryMask boundary_voxels(const BinaryMask& src);

}  // namespace reseg
