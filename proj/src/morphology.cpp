#include "reseg/morphology.hpp"

#include <cmath>
#include <limits>
#include <queue>

namespace reseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Unreachable sentinel: far larger than any squared distance a desk-scale
// volume can produce, yet finite so the parabola arithmetic stays exact.
// Parabolas rooted at this height never undercut a real one inside the line,
// so the envelope over real samples is untouched.
constexpr double kUnreached = 1e15;

// Felzenszwalb/Huttenlocher lower envelope of parabolas, one line at a time.
// f and d are values at integer sample positions; s2 is the squared sample
// spacing in mm^2, so outputs are metric squared distances.
void dt1d(const double* f, double* d, int n, double s2, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] - f[p]) / s2 + static_cast<double>(q) * q - static_cast<double>(p) * p) /
          (2.0 * (q - p));
      if (s > z[k] || k == 0) break;
      --k;
    }
    if (k == 0 && s <= z[0]) {
      v[0] = q;  // undercuts the whole envelope so far
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
    }
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq * s2 + f[v[k]];
  }
}

// Runs dt1d along one axis of a dense (H,W,L) field in place.
void dt_axis(std::vector<double>& field, const Shape3& shape, int axis, double spacing) {
  const int n = shape[axis];
  const double s2 = spacing * spacing;
  std::vector<double> f(n), d(n);
  std::vector<int> v(n);
  std::vector<double> z(n + 1);

  const std::size_t strides[3] = {static_cast<std::size_t>(shape[1]) * shape[2],
                                  static_cast<std::size_t>(shape[2]), 1};
  const std::size_t stride = strides[axis];
  const int outer_axes[3][2] = {{1, 2}, {0, 2}, {0, 1}};
  const int a0 = outer_axes[axis][0], a1 = outer_axes[axis][1];

  for (int i0 = 0; i0 < shape[a0]; ++i0) {
    for (int i1 = 0; i1 < shape[a1]; ++i1) {
      std::size_t base = static_cast<std::size_t>(i0) * strides[a0] +
                         static_cast<std::size_t>(i1) * strides[a1];
      for (int q = 0; q < n; ++q) f[q] = field[base + q * stride];
      dt1d(f.data(), d.data(), n, s2, v.data(), z.data());
      for (int q = 0; q < n; ++q) field[base + q * stride] = d[q];
    }
  }
}

}  // namespace

std::vector<double> squared_distance_mm2(const BinaryMask& src) {
  const auto& geo = src.geometry();
  std::vector<double> field(geo.voxels());
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = src.test(i) ? 0.0 : kUnreached;
  for (int axis = 0; axis < 3; ++axis) dt_axis(field, geo.shape, axis, geo.spacing[axis]);
  for (double& d : field)
    if (d >= kUnreached) d = kInf;
  return field;
}

BinaryMask dilate(const BinaryMask& src, double radius_mm) {
  if (radius_mm < 0.0) throw Error("dilate: negative radius");
  const auto d2 = squared_distance_mm2(src);
  BinaryMask out(src.shape(), src.spacing());
  const double r2 = radius_mm * radius_mm;
  for (std::size_t i = 0; i < d2.size(); ++i) out.set(i, d2[i] <= r2);
  return out;
}

BinaryMask gate_slices(const BinaryMask& src, const std::vector<SliceGate>& gates) {
  if (gates.empty()) return src;
  const auto& geo = src.geometry();
  std::vector<bool> keep(geo.shape[0], false);
  for (int h = 0; h < geo.shape[0]; ++h) {
    for (const auto& g : gates) {
      if (std::abs(h - g.z) * geo.spacing[0] <= g.diameter_mm) {
        keep[h] = true;
        break;
      }
    }
  }
  BinaryMask out(src.shape(), src.spacing());
  const std::size_t plane = static_cast<std::size_t>(geo.shape[1]) * geo.shape[2];
  for (int h = 0; h < geo.shape[0]; ++h) {
    if (!keep[h]) continue;
    const std::size_t base = h * plane;
    for (std::size_t i = 0; i < plane; ++i) out.set(base + i, src.test(base + i));
  }
  return out;
}

ComponentLabels connected_components(const BinaryMask& src, int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw Error("connected_components: connectivity must be 6 or 26");
  const auto& geo = src.geometry();
  ComponentLabels out{LabelVolume(geo.shape, geo.spacing), 0};

  std::vector<Index3> offsets;
  for (int dh = -1; dh <= 1; ++dh)
    for (int dw = -1; dw <= 1; ++dw)
      for (int dl = -1; dl <= 1; ++dl) {
        const int manhattan = std::abs(dh) + std::abs(dw) + std::abs(dl);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan != 1) continue;
        offsets.push_back({dh, dw, dl});
      }

  std::queue<std::size_t> frontier;
  for (std::size_t start = 0; start < src.size(); ++start) {
    if (!src.test(start) || out.labels[start] != 0) continue;
    ++out.count;
    const std::int32_t label = out.count;
    out.labels.names()[label] = "component_" + std::to_string(label);
    out.labels[start] = label;
    frontier.push(start);
    while (!frontier.empty()) {
      const std::size_t cur = frontier.front();
      frontier.pop();
      const Index3 c = geo.coords(cur);
      for (const auto& off : offsets) {
        const int h = c[0] + off[0], w = c[1] + off[1], l = c[2] + off[2];
        if (!geo.in_bounds(h, w, l)) continue;
        const std::size_t ni = geo.index(h, w, l);
        if (src.test(ni) && out.labels[ni] == 0) {
          out.labels[ni] = label;
          frontier.push(ni);
        }
      }
    }
  }
  return out;
}

BinaryMask boundary_voxels(const BinaryMask& src) {
  const auto& geo = src.geometry();
  BinaryMask out(src.shape(), src.spacing());
  constexpr int kFace[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int h = 0; h < geo.shape[0]; ++h)
    for (int w = 0; w < geo.shape[1]; ++w)
      for (int l = 0; l < geo.shape[2]; ++l) {
        if (!src.at(h, w, l)) continue;
        bool edge = false;
        for (const auto& d : kFace) {
          const int nh = h + d[0], nw = w + d[1], nl = l + d[2];
          if (!geo.in_bounds(nh, nw, nl) || !src.at(nh, nw, nl)) {
            edge = true;
            break;
          }
        }
        if (edge) out.set(h, w, l, true);
      }
  return out;
}

}  // namespace reseg
