#pragma once

#include <string>
#include <variant>

#include "reseg/grid.hpp"

namespace reseg {

// On-disk format: `<stem>.vol` holds the raw payload as little-endian float32
// in (h, w, l) row-major order; `<stem>.json` is a sidecar header with shape,
// spacing, kind ("scalar" or "labels") and, for labels, the code dictionary.
// All functions take the .vol path; the header path is derived from it.

void write_volume(const std::string& vol_path, const VolumeGrid& v);
void write_volume(const std::string& vol_path, const LabelVolume& v);
void write_volume(const std::string& vol_path, const BinaryMask& m);  // stored as labels {1:"mask"}

VolumeGrid read_scalar_volume(const std::string& vol_path);
LabelVolume read_label_volume(const std::string& vol_path);

// Any label volume can be viewed as a mask (nonzero => inside).
BinaryMask read_mask_volume(const std::string& vol_path);

std::variant<VolumeGrid, LabelVolume> read_volume(const std::string& vol_path);

}  // namespace reseg
