#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace reseg {

// All recoverable failures (bad files, inconsistent shapes, invalid configs)
// surface as this exception carrying a human-readable message.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis order is (H, W, L) with h the slowest-varying index; h is the axial
// (slice) axis, so a reported slice number indexes into H.
using Shape3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

struct GridGeometry {
  Shape3 shape{0, 0, 0};
  Spacing3 spacing{1.0, 1.0, 1.0};

  std::size_t voxels() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }

  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

  // Row-major with h slowest: idx = (h*W + w)*L + l.
  std::size_t index(int h, int w, int l) const {
    return (static_cast<std::size_t>(h) * shape[1] + w) * shape[2] + l;
  }

  Index3 coords(std::size_t idx) const {
    const int l = static_cast<int>(idx % shape[2]);
    const std::size_t hw = idx / shape[2];
    return {static_cast<int>(hw / shape[1]), static_cast<int>(hw % shape[1]), l};
  }

  bool in_bounds(int h, int w, int l) const {
    return h >= 0 && h < shape[0] && w >= 0 && w < shape[1] && l >= 0 && l < shape[2];
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (shape[a] < 1) throw Error("grid shape must be positive on every axis");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw Error("grid spacing must be positive and finite");
    }
  }

  bool operator==(const GridGeometry& o) const = default;
};

// Dense scalar field (CT volume, probability map, distance map). Values are
// held in double while in memory; the on-disk payload is float32.
class VolumeGrid {
 public:
  VolumeGrid() = default;
  VolumeGrid(Shape3 shape, Spacing3 spacing, double fill = 0.0)
      : geo_{shape, spacing}, data_(geo_.voxels(), fill) {
    geo_.validate();
  }
  VolumeGrid(GridGeometry geo, std::vector<double> data)
      : geo_(geo), data_(std::move(data)) {
    geo_.validate();
    if (data_.size() != geo_.voxels()) throw Error("volume payload size does not match shape");
  }

  const GridGeometry& geometry() const { return geo_; }
  Shape3 shape() const { return geo_.shape; }
  Spacing3 spacing() const { return geo_.spacing; }
  std::size_t size() const { return data_.size(); }

  double at(int h, int w, int l) const { return data_[geo_.index(h, w, l)]; }
  double& at(int h, int w, int l) { return data_[geo_.index(h, w, l)]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  // Guards IO boundaries and loss plumbing; `what` names the offending field.
  void ensure_finite(const std::string& what) const {
    for (double v : data_)
      if (!std::isfinite(v)) throw Error("non-finite value in " + what);
  }

 private:
  GridGeometry geo_;
  std::vector<double> data_;
};

// Integer label field with a code -> organ-name dictionary. Code 0 is
// background and never appears in the dictionary.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Shape3 shape, Spacing3 spacing, std::map<std::int32_t, std::string> names = {})
      : geo_{shape, spacing}, data_(geo_.voxels(), 0), names_(std::move(names)) {
    geo_.validate();
  }

  const GridGeometry& geometry() const { return geo_; }
  Shape3 shape() const { return geo_.shape; }
  Spacing3 spacing() const { return geo_.spacing; }
  std::size_t size() const { return data_.size(); }

  std::int32_t at(int h, int w, int l) const { return data_[geo_.index(h, w, l)]; }
  std::int32_t& at(int h, int w, int l) { return data_[geo_.index(h, w, l)]; }
  std::int32_t operator[](std::size_t i) const { return data_[i]; }
  std::int32_t& operator[](std::size_t i) { return data_[i]; }

  const std::vector<std::int32_t>& data() const { return data_; }
  std::vector<std::int32_t>& data() { return data_; }

  const std::map<std::int32_t, std::string>& names() const { return names_; }
  std::map<std::int32_t, std::string>& names() { return names_; }

  // Every nonzero code present in the data must be named.
  void validate_codes() const {
    for (std::int32_t v : data_)
      if (v != 0 && !names_.contains(v))
        throw Error("label code " + std::to_string(v) + " has no name in the dictionary");
  }

 private:
  GridGeometry geo_;
  std::vector<std::int32_t> data_;
  std::map<std::int32_t, std::string> names_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(Shape3 shape, Spacing3 spacing, bool fill = false)
      : geo_{shape, spacing}, data_(geo_.voxels(), fill ? 1 : 0) {
    geo_.validate();
  }

  const GridGeometry& geometry() const { return geo_; }
  Shape3 shape() const { return geo_.shape; }
  Spacing3 spacing() const { return geo_.spacing; }
  std::size_t size() const { return data_.size(); }

  bool at(int h, int w, int l) const { return data_[geo_.index(h, w, l)] != 0; }
  void set(int h, int w, int l, bool v) { data_[geo_.index(h, w, l)] = v ? 1 : 0; }
  bool test(std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += (v != 0);
    return n;
  }

 private:
  GridGeometry geo_;
  std::vector<std::uint8_t> data_;
};

inline void require_same_grid(const GridGeometry& a, const GridGeometry& b, const std::string& what) {
  if (!(a == b)) throw Error("grid mismatch in " + what);
}

// Extract one labeled organ as a mask.
inline BinaryMask mask_for_code(const LabelVolume& labels, std::int32_t code) {
  BinaryMask m(labels.shape(), labels.spacing());
  for (std::size_t i = 0; i < labels.size(); ++i) m.set(i, labels[i] == code);
  return m;
}

}  // namespace reseg
