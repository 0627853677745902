#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "reseg/morphology.hpp"

namespace oracle {

using namespace reseg;

VolumeGrid brute_convolve(const VolumeGrid& vol, const BallKernel& kernel) {
  const Shape3 vs = vol.shape();
  const Shape3 ks = kernel.size;
  const int rh = ks[0] / 2, rw = ks[1] / 2, rl = ks[2] / 2;
  VolumeGrid out(vs, vol.spacing());
  for (int h = 0; h < vs[0]; ++h)
    for (int w = 0; w < vs[1]; ++w)
      for (int l = 0; l < vs[2]; ++l) {
        double acc = 0.0;
        for (int kh = -rh; kh <= rh; ++kh)
          for (int kw = -rw; kw <= rw; ++kw)
            for (int kl = -rl; kl <= rl; ++kl) {
              const int sh = h + kh, sw = w + kw, sl = l + kl;
              if (sh < 0 || sh >= vs[0] || sw < 0 || sw >= vs[1] || sl < 0 || sl >= vs[2])
                continue;
              acc += kernel.at(kh + rh, kw + rw, kl + rl) * vol.at(sh, sw, sl);
            }
        out.at(h, w, l) = acc;
      }
  return out;
}

BallKernel reference_kernel(double diameter_mm, Spacing3 spacing, double sigma_factor,
                            bool sigma_on_radius) {
  const double radius = diameter_mm / 2.0;
  BallKernel k;
  k.diameter_mm = diameter_mm;
  k.spacing = spacing;
  for (int a = 0; a < 3; ++a)
    k.size[a] = 2 * static_cast<int>(std::floor(radius / spacing[a])) + 1;
  const double sigma = sigma_factor * (sigma_on_radius ? radius : diameter_mm);
  k.weights.assign(static_cast<std::size_t>(k.size[0]) * k.size[1] * k.size[2], 0.0);
  const int rh = k.size[0] / 2, rw = k.size[1] / 2, rl = k.size[2] / 2;
  std::size_t i = 0;
  for (int h = -rh; h <= rh; ++h)
    for (int w = -rw; w <= rw; ++w)
      for (int l = -rl; l <= rl; ++l, ++i) {
        const double d2 = h * spacing[0] * h * spacing[0] + w * spacing[1] * w * spacing[1] +
                          l * spacing[2] * l * spacing[2];
        if (d2 <= radius * radius) k.weights[i] = std::exp(-d2 / (2.0 * sigma * sigma));
      }
  return k;
}

BinaryMask brute_dilate(const BinaryMask& src, double radius_mm) {
  const auto& geo = src.geometry();
  BinaryMask out(geo.shape, geo.spacing);
  const double r2 = radius_mm * radius_mm;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Index3 a = geo.coords(i);
    bool hit = false;
    for (std::size_t j = 0; j < src.size() && !hit; ++j) {
      if (!src.test(j)) continue;
      const Index3 b = geo.coords(j);
      double d2 = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double d = (a[ax] - b[ax]) * geo.spacing[ax];
        d2 += d * d;
      }
      hit = d2 <= r2;
    }
    out.set(i, hit);
  }
  return out;
}

std::vector<double> brute_sqdist(const BinaryMask& src) {
  const auto& geo = src.geometry();
  std::vector<double> out(src.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Index3 a = geo.coords(i);
    for (std::size_t j = 0; j < src.size(); ++j) {
      if (!src.test(j)) continue;
      const Index3 b = geo.coords(j);
      double d2 = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double d = (a[ax] - b[ax]) * geo.spacing[ax];
        d2 += d * d;
      }
      out[i] = std::min(out[i], d2);
    }
  }
  return out;
}

namespace {

// In-ball test on voxel-center distance, shared by score and carve.
bool inside_ball(const GridGeometry& geo, Index3 center, Index3 p, double diameter_mm) {
  const double r = diameter_mm / 2.0;
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - center[a]) * geo.spacing[a];
    d2 += d * d;
  }
  return d2 <= r * r;
}

}  // namespace

std::vector<OracleTumor> oracle_localize(const VolumeGrid& prob, const BinaryMask& organ,
                                         const std::vector<TumorFinding>& findings,
                                         const LocalizeConfig& cfg) {
  const auto& geo = prob.geometry();
  const double voxel_vol = geo.voxel_volume_mm3();

  std::vector<const TumorFinding*> order(findings.size());
  for (std::size_t i = 0; i < findings.size(); ++i) order[i] = &findings[i];
  std::stable_sort(order.begin(), order.end(), [](const TumorFinding* a, const TumorFinding* b) {
    const double da = a->diameters_mm.empty() ? kMinTumorDiameterMm : a->diameters_mm[0];
    const double db = b->diameters_mm.empty() ? kMinTumorDiameterMm : b->diameters_mm[0];
    return da > db;
  });

  std::vector<double> working(prob.size(), 0.0);
  for (std::size_t i = 0; i < prob.size(); ++i) working[i] = organ.test(i) ? prob[i] : 0.0;

  std::vector<OracleTumor> out;
  for (const TumorFinding* f : order) {
    const double d = f->diameters_mm.empty() ? kMinTumorDiameterMm : f->diameters_mm[0];
    const double inflated = d * (1.0 + cfg.inflation);
    const BallKernel kernel =
        reference_kernel(inflated, geo.spacing, cfg.sigma_factor, cfg.sigma_on_radius);
    const int rh = kernel.size[0] / 2, rw = kernel.size[1] / 2, rl = kernel.size[2] / 2;

    // Gated region for this finding only.
    std::vector<char> region(prob.size(), 0);
    for (std::size_t i = 0; i < prob.size(); ++i) {
      if (!organ.test(i)) continue;
      if (f->slice) {
        const Index3 c = geo.coords(i);
        if (std::abs(c[0] - *f->slice) * geo.spacing[0] > d) continue;
      }
      region[i] = 1;
    }

    // Score every surviving position by direct summation over the masked
    // working copy.
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i < prob.size(); ++i) {
      if (!region[i]) continue;
      const Index3 c = geo.coords(i);
      double score = 0.0;
      for (int h = -rh; h <= rh; ++h)
        for (int w = -rw; w <= rw; ++w)
          for (int l = -rl; l <= rl; ++l) {
            const int sh = c[0] + h, sw = c[1] + w, sl = c[2] + l;
            if (!geo.in_bounds(sh, sw, sl)) continue;
            const std::size_t j = geo.index(sh, sw, sl);
            if (!region[j]) continue;
            score += kernel.at(h + rh, w + rw, l + rl) * working[j];
          }
      if (!found || score > best_score) {
        best = i;
        best_score = score;
        found = true;
      }
    }

    OracleTumor t;
    t.center = geo.coords(best);

    double v_est;
    if (const auto v = estimate_volume(*f))
      v_est = *v;
    else
      v_est = min_tumor_volume_mm3();
    const std::size_t n =
        static_cast<std::size_t>(std::max<long long>(1, std::llround(v_est / voxel_vol)));

    // Candidates: inflated ball around the center, inside the gated region.
    std::vector<std::pair<double, std::size_t>> cands;
    for (std::size_t i = 0; i < prob.size(); ++i) {
      if (!region[i]) continue;
      if (!inside_ball(geo, t.center, geo.coords(i), inflated)) continue;
      cands.emplace_back(-working[i], i);  // sort ascending = value desc, index asc
    }
    std::sort(cands.begin(), cands.end());
    const std::size_t take = std::min(n, cands.size());
    for (std::size_t i = 0; i < take; ++i) t.voxels.push_back(cands[i].second);
    std::sort(t.voxels.begin(), t.voxels.end());
    for (std::size_t idx : t.voxels) working[idx] = 0.0;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, const std::vector<std::size_t>& coords,
                                 double h) {
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t c : coords) {
    const double orig = x[c];
    x[c] = orig + h;
    const double fp = f(x);
    x[c] = orig - h;
    const double fm = f(x);
    x[c] = orig;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

double gradient_agreement(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          const std::vector<std::size_t>& coords, double rel_tol, double floor) {
  if (coords.empty()) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double a = analytic[coords[i]];
    const double n = numeric[i];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    ok += (err <= rel_tol);
  }
  return static_cast<double>(ok) / static_cast<double>(coords.size());
}

VolumeGrid random_prob(Shape3 shape, Spacing3 spacing, Rng& rng, double lo, double hi) {
  VolumeGrid v(shape, spacing);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

BinaryMask random_blob(Shape3 shape, Spacing3 spacing, Rng& rng) {
  BinaryMask m(shape, spacing);
  while (true) {
    std::array<double, 3> c{}, r{};
    for (int a = 0; a < 3; ++a) {
      c[a] = rng.uniform(shape[a] * 0.3, shape[a] * 0.7);
      r[a] = rng.uniform(shape[a] * 0.2, shape[a] * 0.45);
    }
    for (int h = 0; h < shape[0]; ++h)
      for (int w = 0; w < shape[1]; ++w)
        for (int l = 0; l < shape[2]; ++l) {
          const double dh = (h - c[0]) / r[0], dw = (w - c[1]) / r[1], dl = (l - c[2]) / r[2];
          m.set(h, w, l, dh * dh + dw * dw + dl * dl <= 1.0);
        }
    if (m.count() > 0) return m;
  }
}

}  // namespace oracle
