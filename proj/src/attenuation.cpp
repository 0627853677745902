#include "reseg/attenuation.hpp"

#include <cmath>

#include "reseg/losses.hpp"
#include "reseg/rng.hpp"

namespace reseg {

AttenuationNet AttenuationNet::init(std::uint64_t seed, int hidden) {
  if (hidden < 1) throw Error("attenuation net: hidden size must be positive");
  AttenuationNet net;
  net.hidden = hidden;
  net.w1.resize(static_cast<std::size_t>(hidden) * 4);
  net.b1.assign(hidden, 0.0);
  net.w2.resize(static_cast<std::size_t>(3) * hidden);
  net.b2.assign(3, 0.0);
  Rng r1(mix_seed(seed, 101));
  const double s1 = std::sqrt(2.0 / 4.0);
  for (auto& w : net.w1) w = r1.normal(0.0, s1);
  Rng r2(mix_seed(seed, 102));
  const double s2 = std::sqrt(2.0 / hidden);
  for (auto& w : net.w2) w = r2.normal(0.0, s2);
  return net;
}

AttenuationGrads AttenuationGrads::zeros_like(const AttenuationNet& net) {
  AttenuationGrads g;
  g.w1.assign(net.w1.size(), 0.0);
  g.b1.assign(net.b1.size(), 0.0);
  g.w2.assign(net.w2.size(), 0.0);
  g.b2.assign(net.b2.size(), 0.0);
  return g;
}

void AttenuationGrads::accumulate(const AttenuationGrads& other) {
  if (other.w1.empty()) return;
  if (w1.empty()) {
    *this = other;
    return;
  }
  for (std::size_t i = 0; i < w1.size(); ++i) w1[i] += other.w1[i];
  for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += other.b1[i];
  for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += other.w2[i];
  for (std::size_t i = 0; i < b2.size(); ++i) b2[i] += other.b2[i];
}

namespace {

struct PooledStat {
  double sum_w = 0.0;
  double mean = 0.0;
  double var = 0.0;
  double stdev = 0.0;
};

PooledStat pooled(const std::vector<double>& w, const std::vector<double>& c, double var_floor) {
  PooledStat s;
  for (double x : w) s.sum_w += x;
  if (s.sum_w <= 0.0) return s;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * c[i];
  s.mean = acc / s.sum_w;
  acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = c[i] - s.mean;
    acc += w[i] * d * d;
  }
  s.var = acc / s.sum_w;
  s.stdev = std::sqrt(s.var + var_floor);
  return s;
}

}  // namespace

AttenuationResult attenuation_loss(const VolumeGrid& ct, const VolumeGrid& prob,
                                   const BinaryMask& organ, AttenuationClass label,
                                   const AttenuationNet& net, const AttenuationConfig& cfg) {
  require_same_grid(ct.geometry(), prob.geometry(), "attenuation_loss");
  require_same_grid(ct.geometry(), organ.geometry(), "attenuation_loss");
  AttenuationResult res;
  if (label == AttenuationClass::unknown) return res;

  const std::size_t n = prob.size();
  std::vector<double> wt(n, 0.0), wo(n, 0.0), c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = ct[i];
    if (!organ.test(i)) continue;
    const double t = cfg.hard_threshold ? (prob[i] > cfg.threshold ? 1.0 : 0.0) : prob[i];
    wt[i] = t;
    wo[i] = 1.0 - t;
  }
  const PooledStat st = pooled(wt, c, cfg.var_floor);
  const PooledStat so = pooled(wo, c, cfg.var_floor);
  // Nothing resembling a tumor yet (or the organ is saturated): no signal to
  // classify, skip rather than divide by ~0.
  if (st.sum_w < cfg.weight_eps || so.sum_w < cfg.weight_eps) return res;

  res.features = {st.mean, st.stdev, so.mean, so.stdev};

  // 4 -> hidden tanh -> 3 logits -> softmax cross-entropy.
  const int hid = net.hidden;
  std::vector<double> h(hid), a(hid);
  for (int j = 0; j < hid; ++j) {
    double z = net.b1[j];
    for (int k = 0; k < 4; ++k) z += net.w1[static_cast<std::size_t>(j) * 4 + k] * res.features[k];
    h[j] = z;
    a[j] = std::tanh(z);
  }
  std::array<double, 3> logits{};
  for (int o = 0; o < 3; ++o) {
    double z = net.b2[o];
    for (int j = 0; j < hid; ++j) z += net.w2[static_cast<std::size_t>(o) * hid + j] * a[j];
    logits[o] = z;
  }
  double zmax = std::max({logits[0], logits[1], logits[2]});
  double zsum = 0.0;
  for (int o = 0; o < 3; ++o) zsum += std::exp(logits[o] - zmax);
  for (int o = 0; o < 3; ++o) res.class_probs[o] = std::exp(logits[o] - zmax) / zsum;

  const int y = static_cast<int>(label);
  res.value = -(logits[y] - zmax - std::log(zsum));
  res.skipped = false;
  if (!std::isfinite(res.value)) throw Error("non-finite value in attenuation_loss");

  // Backward through the classifier.
  std::array<double, 3> dlogits{};
  for (int o = 0; o < 3; ++o) dlogits[o] = res.class_probs[o] - (o == y ? 1.0 : 0.0);

  res.dnet = AttenuationGrads::zeros_like(net);
  std::vector<double> da(hid, 0.0);
  for (int o = 0; o < 3; ++o) {
    res.dnet.b2[o] = dlogits[o];
    for (int j = 0; j < hid; ++j) {
      res.dnet.w2[static_cast<std::size_t>(o) * hid + j] = dlogits[o] * a[j];
      da[j] += net.w2[static_cast<std::size_t>(o) * hid + j] * dlogits[o];
    }
  }
  std::array<double, 4> dfeat{};
  for (int j = 0; j < hid; ++j) {
    const double dz = da[j] * (1.0 - a[j] * a[j]);
    res.dnet.b1[j] = dz;
    for (int k = 0; k < 4; ++k) {
      res.dnet.w1[static_cast<std::size_t>(j) * 4 + k] = dz * res.features[k];
      dfeat[k] += net.w1[static_cast<std::size_t>(j) * 4 + k] * dz;
    }
  }

  if (cfg.hard_threshold) return res;  // pooling weights are constants there

  // Chain into the probability map through the pooled statistics. For
  // weighted stats: dmean/dw_i = (c_i - mean)/W and
  // dvar/dw_i = ((c_i - mean)^2 - var)/W; std adds the 1/(2 std) factor.
  res.dprob.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!organ.test(i)) continue;
    const double dt_mean = (c[i] - st.mean) / st.sum_w;
    const double dt_std = ((c[i] - st.mean) * (c[i] - st.mean) - st.var) / (st.sum_w * 2.0 * st.stdev);
    const double do_mean = (c[i] - so.mean) / so.sum_w;
    const double do_std = ((c[i] - so.mean) * (c[i] - so.mean) - so.var) / (so.sum_w * 2.0 * so.stdev);
    // w_t = t, w_o = 1 - t on organ voxels.
    res.dprob[i] = dfeat[0] * dt_mean + dfeat[1] * dt_std - dfeat[2] * do_mean - dfeat[3] * do_std;
  }
  project_gradient_box(prob.data(), res.dprob);
  return res;
}

}  // namespace reseg
