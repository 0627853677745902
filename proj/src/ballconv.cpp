#include "reseg/ballconv.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include <fftw3.h>

#include "reseg/morphology.hpp"

namespace reseg {

BallKernel BallKernel::make(double diameter_mm, Spacing3 spacing, double sigma_factor,
                            bool sigma_on_radius) {
  if (!(diameter_mm > 0.0)) throw Error("ball kernel: diameter must be positive");
  if (!(sigma_factor > 0.0)) throw Error("ball kernel: sigma factor must be positive");
  BallKernel k;
  k.diameter_mm = diameter_mm;
  k.spacing = spacing;
  const double r = 0.5 * diameter_mm;
  const double sigma = sigma_factor * (sigma_on_radius ? r : diameter_mm);
  Shape3 half{};
  for (int a = 0; a < 3; ++a) {
    half[a] = static_cast<int>(std::floor(r / spacing[a]));
    k.size[a] = 2 * half[a] + 1;
  }
  k.weights.assign(static_cast<std::size_t>(k.size[0]) * k.size[1] * k.size[2], 0.0);
  const double r2 = r * r;
  std::size_t idx = 0;
  for (int i = -half[0]; i <= half[0]; ++i)
    for (int j = -half[1]; j <= half[1]; ++j)
      for (int l = -half[2]; l <= half[2]; ++l, ++idx) {
        const double d2 = i * spacing[0] * (i * spacing[0]) + j * spacing[1] * (j * spacing[1]) +
                          l * spacing[2] * (l * spacing[2]);
        if (d2 <= r2) k.weights[idx] = std::exp(-d2 / (2.0 * sigma * sigma));
      }
  return k;
}

namespace {

// Direct backend: tap-major accumulation, skipping the zero corners of the
// kernel cube. Inner loop is contiguous along l.
VolumeGrid convolve_direct(const VolumeGrid& vol, const BallKernel& k) {
  const auto& geo = vol.geometry();
  const int H = geo.shape[0], W = geo.shape[1], L = geo.shape[2];
  VolumeGrid out(geo.shape, geo.spacing);
  const int ch = k.size[0] / 2, cw = k.size[1] / 2, cl = k.size[2] / 2;

  for (int kh = 0; kh < k.size[0]; ++kh)
    for (int kw = 0; kw < k.size[1]; ++kw)
      for (int kl = 0; kl < k.size[2]; ++kl) {
        const double wgt = k.at(kh, kw, kl);
        if (wgt == 0.0) continue;
        const int dh = kh - ch, dw = kw - cw, dl = kl - cl;
        const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
        const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
        const int l0 = std::max(0, -dl), l1 = std::min(L, L - dl);
        for (int h = h0; h < h1; ++h)
          for (int w = w0; w < w1; ++w) {
            double* o = &out.data()[geo.index(h, w, 0)];
            const double* in = &vol.data()[geo.index(h + dh, w + dw, dl)];
            for (int l = l0; l < l1; ++l) o[l] += wgt * in[l];
          }
      }
  return out;
}

int next_5smooth(int n) {
  for (int m = n;; ++m) {
    int r = m;
    for (int p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

struct FftPlans {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

// Planner access is serialized; plans are alignment-agnostic so they can run
// on any buffer of the right shape. FFTW_ESTIMATE keeps plan choice (and thus
// output bits) stable across runs.
std::mutex g_fftw_mutex;
std::map<std::array<int, 3>, FftPlans>& plan_cache() {
  static std::map<std::array<int, 3>, FftPlans> cache;
  return cache;
}

FftPlans get_plans(const std::array<int, 3>& padded) {
  std::lock_guard<std::mutex> lock(g_fftw_mutex);
  auto& cache = plan_cache();
  auto it = cache.find(padded);
  if (it != cache.end()) return it->second;

  const int p0 = padded[0], p1 = padded[1], p2 = padded[2];
  const std::size_t real_n = static_cast<std::size_t>(p0) * p1 * p2;
  const std::size_t cplx_n = static_cast<std::size_t>(p0) * p1 * (p2 / 2 + 1);
  double* rbuf = fftw_alloc_real(real_n);
  fftw_complex* cbuf = fftw_alloc_complex(cplx_n);
  FftPlans plans;
  plans.fwd = fftw_plan_dft_r2c_3d(p0, p1, p2, rbuf, cbuf, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.bwd = fftw_plan_dft_c2r_3d(p0, p1, p2, cbuf, rbuf, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(rbuf);
  fftw_free(cbuf);
  if (!plans.fwd || !plans.bwd) throw Error("FFTW planning failed");
  cache[padded] = plans;
  return plans;
}

// FFT backend: zero-pad to a 5-smooth size, wrap the (symmetric) kernel
// around the origin, multiply spectra. The ball kernel is even, so circular
// convolution equals the correlation the direct backend computes.
VolumeGrid convolve_fft(const VolumeGrid& vol, const BallKernel& k) {
  const auto& geo = vol.geometry();
  const int H = geo.shape[0], W = geo.shape[1], L = geo.shape[2];
  std::array<int, 3> padded{};
  for (int a = 0; a < 3; ++a) padded[a] = next_5smooth(geo.shape[a] + k.size[a] - 1);
  const int p0 = padded[0], p1 = padded[1], p2 = padded[2];
  const std::size_t real_n = static_cast<std::size_t>(p0) * p1 * p2;
  const std::size_t cplx_n = static_cast<std::size_t>(p0) * p1 * (p2 / 2 + 1);

  FftPlans plans = get_plans(padded);

  double* rbuf = fftw_alloc_real(real_n);
  fftw_complex* vspec = fftw_alloc_complex(cplx_n);
  fftw_complex* kspec = fftw_alloc_complex(cplx_n);

  auto pad_index = [&](int h, int w, int l) {
    return (static_cast<std::size_t>(h) * p1 + w) * p2 + l;
  };

  std::fill(rbuf, rbuf + real_n, 0.0);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int l = 0; l < L; ++l) rbuf[pad_index(h, w, l)] = vol.at(h, w, l);
  fftw_execute_dft_r2c(plans.fwd, rbuf, vspec);

  std::fill(rbuf, rbuf + real_n, 0.0);
  const int ch = k.size[0] / 2, cw = k.size[1] / 2, cl = k.size[2] / 2;
  for (int kh = 0; kh < k.size[0]; ++kh)
    for (int kw = 0; kw < k.size[1]; ++kw)
      for (int kl = 0; kl < k.size[2]; ++kl) {
        const double wgt = k.at(kh, kw, kl);
        if (wgt == 0.0) continue;
        const int oh = ((kh - ch) % p0 + p0) % p0;
        const int ow = ((kw - cw) % p1 + p1) % p1;
        const int ol = ((kl - cl) % p2 + p2) % p2;
        rbuf[pad_index(oh, ow, ol)] = wgt;
      }
  fftw_execute_dft_r2c(plans.fwd, rbuf, kspec);

  for (std::size_t i = 0; i < cplx_n; ++i) {
    const double re = vspec[i][0] * kspec[i][0] - vspec[i][1] * kspec[i][1];
    const double im = vspec[i][0] * kspec[i][1] + vspec[i][1] * kspec[i][0];
    vspec[i][0] = re;
    vspec[i][1] = im;
  }
  fftw_execute_dft_c2r(plans.bwd, vspec, rbuf);

  VolumeGrid out(geo.shape, geo.spacing);
  const double scale = 1.0 / static_cast<double>(real_n);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int l = 0; l < L; ++l) out.at(h, w, l) = rbuf[pad_index(h, w, l)] * scale;

  fftw_free(rbuf);
  fftw_free(vspec);
  fftw_free(kspec);
  return out;
}

}  // namespace

VolumeGrid ball_convolve(const VolumeGrid& vol, const BallKernel& kernel, ConvBackend backend) {
  for (int a = 0; a < 3; ++a)
    if (kernel.size[a] % 2 == 0) throw Error("ball kernel sides must be odd");
  return backend == ConvBackend::direct ? convolve_direct(vol, kernel) : convolve_fft(vol, kernel);
}

std::vector<std::size_t> carve_top_n(const VolumeGrid& response, Index3 center, double diameter_mm,
                                     std::size_t n, const BinaryMask* allowed, bool* clamped) {
  const auto& geo = response.geometry();
  if (!geo.in_bounds(center[0], center[1], center[2])) throw Error("carve: center out of bounds");
  const double r = 0.5 * diameter_mm;
  const double r2 = r * r;
  Shape3 half{};
  for (int a = 0; a < 3; ++a) half[a] = static_cast<int>(std::floor(r / geo.spacing[a]));

  std::vector<std::size_t> candidates;
  for (int dh = -half[0]; dh <= half[0]; ++dh)
    for (int dw = -half[1]; dw <= half[1]; ++dw)
      for (int dl = -half[2]; dl <= half[2]; ++dl) {
        const int h = center[0] + dh, w = center[1] + dw, l = center[2] + dl;
        if (!geo.in_bounds(h, w, l)) continue;
        const double d2 = dh * geo.spacing[0] * (dh * geo.spacing[0]) +
                          dw * geo.spacing[1] * (dw * geo.spacing[1]) +
                          dl * geo.spacing[2] * (dl * geo.spacing[2]);
        if (d2 > r2) continue;
        const std::size_t idx = geo.index(h, w, l);
        if (allowed && !allowed->test(idx)) continue;
        candidates.push_back(idx);
      }

  if (clamped) *clamped = candidates.size() < n;
  const std::size_t take = std::min(n, candidates.size());
  // Highest response first; equal responses resolve to the lower index.
  // candidates is generated in ascending index order, so stable_sort keeps
  // that as the tie order.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return response[a] > response[b]; });
  candidates.resize(take);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<LocalizedTumor> localize_tumors(const VolumeGrid& prob, const BinaryMask& organ,
                                            const std::vector<TumorFinding>& findings,
                                            const LocalizeConfig& cfg) {
  require_same_grid(prob.geometry(), organ.geometry(), "localize_tumors");
  const auto& geo = prob.geometry();
  const double voxel_vol = geo.voxel_volume_mm3();

  // Largest first; unsized findings run at the minimum-size prior.
  std::vector<const TumorFinding*> order;
  for (const auto& f : findings) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(), [](const TumorFinding* a, const TumorFinding* b) {
    const double da = a->diameters_mm.empty() ? kMinTumorDiameterMm : a->diameters_mm[0];
    const double db = b->diameters_mm.empty() ? kMinTumorDiameterMm : b->diameters_mm[0];
    return da > db;
  });

  VolumeGrid working(geo.shape, geo.spacing);
  for (std::size_t i = 0; i < prob.size(); ++i) working[i] = organ.test(i) ? prob[i] : 0.0;

  std::vector<LocalizedTumor> out;
  for (const TumorFinding* f : order) {
    LocalizedTumor t;
    t.size_reported = !f->diameters_mm.empty();
    t.diameter_mm = t.size_reported ? f->diameters_mm[0] : kMinTumorDiameterMm;
    t.inflated_mm = t.diameter_mm * (1.0 + cfg.inflation);

    BinaryMask region = organ;
    if (f->slice) region = gate_slices(organ, {{*f->slice, t.diameter_mm}});
    if (region.count() == 0)
      throw Error("localize: reported slice " +
                  (f->slice ? std::to_string(*f->slice) : std::string("?")) +
                  " does not intersect organ " + f->organ);

    VolumeGrid conv_in(geo.shape, geo.spacing);
    for (std::size_t i = 0; i < working.size(); ++i)
      conv_in[i] = region.test(i) ? working[i] : 0.0;

    const BallKernel kernel =
        BallKernel::make(t.inflated_mm, geo.spacing, cfg.sigma_factor, cfg.sigma_on_radius);
    const VolumeGrid response = ball_convolve(conv_in, kernel, cfg.backend);

    // Best in-region response; ties toward the lower row-major index.
    std::size_t best = 0;
    double best_val = -1.0;
    bool found = false;
    for (std::size_t i = 0; i < response.size(); ++i) {
      if (!region.test(i)) continue;
      if (!found || response[i] > best_val) {
        best = i;
        best_val = response[i];
        found = true;
      }
    }
    t.center = geo.coords(best);

    const double v_est = estimate_volume(*f).value_or(min_tumor_volume_mm3());
    t.target_voxels = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(v_est / voxel_vol)));
    t.voxels = carve_top_n(working, t.center, t.inflated_mm, t.target_voxels, &region,
                           &t.capacity_clamped);
    for (std::size_t idx : t.voxels) working[idx] = 0.0;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace reseg
