#include "reseg/model.hpp"

#include <cmath>

#include "reseg/rng.hpp"

namespace reseg {

ConvParams ConvParams::make(int in_ch, int out_ch, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw Error("conv kernel must be odd and positive");
  ConvParams p;
  p.in_ch = in_ch;
  p.out_ch = out_ch;
  p.kernel = kernel;
  p.weights.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel * kernel, 0.0);
  p.bias.assign(out_ch, 0.0);
  return p;
}

namespace {

void he_init(ConvParams& p, Rng& rng) {
  const double fan_in = static_cast<double>(p.in_ch) * p.kernel * p.kernel * p.kernel;
  const double s = std::sqrt(2.0 / fan_in);
  for (auto& w : p.weights) w = rng.normal(0.0, s);
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

SegModel SegModel::init(const SegModelConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 1 || cfg.hidden < 1) throw Error("model: classes and hidden must be positive");
  SegModel m;
  m.cfg = cfg;
  m.conv1 = ConvParams::make(cfg.in_channels, cfg.hidden, cfg.kernel);
  m.conv2 = ConvParams::make(cfg.hidden, cfg.hidden, cfg.kernel);
  m.conv3 = ConvParams::make(cfg.hidden, cfg.classes, cfg.kernel);
  m.deep = ConvParams::make(cfg.hidden, cfg.classes, 1);
  Rng r1(mix_seed(seed, 1)), r2(mix_seed(seed, 2)), r3(mix_seed(seed, 3)), r4(mix_seed(seed, 4));
  he_init(m.conv1, r1);
  he_init(m.conv2, r2);
  he_init(m.conv3, r3);
  he_init(m.deep, r4);
  return m;
}

std::size_t SegModel::param_count() const {
  std::size_t n = 0;
  for (const auto* b : param_blocks()) n += b->size();
  return n;
}

std::vector<std::vector<double>*> SegModel::param_blocks() {
  return {&conv1.weights, &conv1.bias, &conv2.weights, &conv2.bias,
          &conv3.weights, &conv3.bias, &deep.weights,  &deep.bias};
}

std::vector<const std::vector<double>*> SegModel::param_blocks() const {
  return {&conv1.weights, &conv1.bias, &conv2.weights, &conv2.bias,
          &conv3.weights, &conv3.bias, &deep.weights,  &deep.bias};
}

ModelGrads ModelGrads::zeros_like(const SegModel& m) {
  ModelGrads g;
  g.conv1 = ConvParams::make(m.conv1.in_ch, m.conv1.out_ch, m.conv1.kernel);
  g.conv2 = ConvParams::make(m.conv2.in_ch, m.conv2.out_ch, m.conv2.kernel);
  g.conv3 = ConvParams::make(m.conv3.in_ch, m.conv3.out_ch, m.conv3.kernel);
  g.deep = ConvParams::make(m.deep.in_ch, m.deep.out_ch, m.deep.kernel);
  return g;
}

void ModelGrads::accumulate(const ModelGrads& o) {
  auto add = [](ConvParams& a, const ConvParams& b) {
    for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += b.weights[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
  };
  add(conv1, o.conv1);
  add(conv2, o.conv2);
  add(conv3, o.conv3);
  add(deep, o.deep);
}

void ModelGrads::scale(double s) {
  for (auto* b : param_blocks())
    for (double& v : *b) v *= s;
}

std::vector<std::vector<double>*> ModelGrads::param_blocks() {
  return {&conv1.weights, &conv1.bias, &conv2.weights, &conv2.bias,
          &conv3.weights, &conv3.bias, &deep.weights,  &deep.bias};
}

void conv3d_forward(const Tensor4& x, const ConvParams& p, Tensor4& y) {
  if (x.channels != p.in_ch) throw Error("conv forward: channel mismatch");
  const int H = x.shape[0], W = x.shape[1], L = x.shape[2];
  const int K = p.kernel, c0 = K / 2;
  y = Tensor4(p.out_ch, x.shape);

  for (int co = 0; co < p.out_ch; ++co) {
    double* yc = y.chan(co);
    const double b = p.bias[co];
    for (std::size_t i = 0; i < y.plane(); ++i) yc[i] = b;
    for (int ci = 0; ci < p.in_ch; ++ci) {
      const double* xc = x.chan(ci);
      const double* wt =
          &p.weights[((static_cast<std::size_t>(co) * p.in_ch + ci) * K * K * K)];
      for (int kh = 0; kh < K; ++kh)
        for (int kw = 0; kw < K; ++kw)
          for (int kl = 0; kl < K; ++kl) {
            const double wv = wt[(static_cast<std::size_t>(kh) * K + kw) * K + kl];
            const int dh = kh - c0, dw = kw - c0, dl = kl - c0;
            const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
            const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
            const int l0 = std::max(0, -dl), l1 = std::min(L, L - dl);
            for (int h = h0; h < h1; ++h)
              for (int w = w0; w < w1; ++w) {
                double* yrow = yc + (static_cast<std::size_t>(h) * W + w) * L;
                const double* xrow =
                    xc + (static_cast<std::size_t>(h + dh) * W + (w + dw)) * L + dl;
                for (int l = l0; l < l1; ++l) yrow[l] += wv * xrow[l];
              }
          }
    }
  }
}

void conv3d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& dy, Tensor4* dx,
                     ConvParams& dparams) {
  const int H = x.shape[0], W = x.shape[1], L = x.shape[2];
  const int K = p.kernel, c0 = K / 2;
  if (dx) *dx = Tensor4(p.in_ch, x.shape);

  for (int co = 0; co < p.out_ch; ++co) {
    const double* dyc = dy.chan(co);
    double bacc = 0.0;
    for (std::size_t i = 0; i < dy.plane(); ++i) bacc += dyc[i];
    dparams.bias[co] = bacc;

    for (int ci = 0; ci < p.in_ch; ++ci) {
      const double* xc = x.chan(ci);
      double* dxc = dx ? dx->chan(ci) : nullptr;
      double* dwt = &dparams.weights[((static_cast<std::size_t>(co) * p.in_ch + ci) * K * K * K)];
      const double* wt = &p.weights[((static_cast<std::size_t>(co) * p.in_ch + ci) * K * K * K)];
      for (int kh = 0; kh < K; ++kh)
        for (int kw = 0; kw < K; ++kw)
          for (int kl = 0; kl < K; ++kl) {
            const int dh = kh - c0, dw = kw - c0, dl = kl - c0;
            const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
            const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
            const int l0 = std::max(0, -dl), l1 = std::min(L, L - dl);
            double wacc = 0.0;
            const double wv = wt[(static_cast<std::size_t>(kh) * K + kw) * K + kl];
            for (int h = h0; h < h1; ++h)
              for (int w = w0; w < w1; ++w) {
                const double* dyrow = dyc + (static_cast<std::size_t>(h) * W + w) * L;
                const double* xrow =
                    xc + (static_cast<std::size_t>(h + dh) * W + (w + dw)) * L + dl;
                double* dxrow =
                    dxc ? dxc + (static_cast<std::size_t>(h + dh) * W + (w + dw)) * L + dl
                        : nullptr;
                if (dxrow) {
                  for (int l = l0; l < l1; ++l) {
                    wacc += dyrow[l] * xrow[l];
                    dxrow[l] += wv * dyrow[l];
                  }
                } else {
                  for (int l = l0; l < l1; ++l) wacc += dyrow[l] * xrow[l];
                }
              }
            dwt[(static_cast<std::size_t>(kh) * K + kw) * K + kl] = wacc;
          }
    }
  }
}

ModelState forward(const SegModel& m, const Tensor4& input) {
  ModelState st;
  st.input = input;
  Tensor4 z;
  conv3d_forward(input, m.conv1, z);
  st.a1 = z;
  for (double& v : st.a1.data) v = std::tanh(v);
  conv3d_forward(st.a1, m.conv2, z);
  st.a2 = z;
  for (double& v : st.a2.data) v = std::tanh(v);
  conv3d_forward(st.a2, m.conv3, z);
  st.prob = z;
  for (double& v : st.prob.data) v = sigmoid(v);
  conv3d_forward(st.a2, m.deep, z);
  st.deep_prob = z;
  for (double& v : st.deep_prob.data) v = sigmoid(v);
  return st;
}

ModelGrads backward(const SegModel& m, const ModelState& st, const Tensor4& dprob,
                    const Tensor4& ddeep) {
  ModelGrads g = ModelGrads::zeros_like(m);

  // Through the two sigmoid heads into pre-activations.
  Tensor4 dz3, dzd;
  const bool has_main = !dprob.data.empty();
  const bool has_deep = !ddeep.data.empty();
  if (has_main) {
    dz3 = dprob;
    for (std::size_t i = 0; i < dz3.data.size(); ++i) {
      const double s = st.prob.data[i];
      dz3.data[i] *= s * (1.0 - s);
    }
  }
  if (has_deep) {
    dzd = ddeep;
    for (std::size_t i = 0; i < dzd.data.size(); ++i) {
      const double s = st.deep_prob.data[i];
      dzd.data[i] *= s * (1.0 - s);
    }
  }

  Tensor4 da2(m.cfg.hidden, st.a2.shape);
  if (has_main) {
    Tensor4 da2_main;
    conv3d_backward(st.a2, m.conv3, dz3, &da2_main, g.conv3);
    da2 = da2_main;
  }
  if (has_deep) {
    Tensor4 da2_deep;
    conv3d_backward(st.a2, m.deep, dzd, &da2_deep, g.deep);
    for (std::size_t i = 0; i < da2.data.size(); ++i) da2.data[i] += da2_deep.data[i];
  }

  Tensor4 dz2 = da2;
  for (std::size_t i = 0; i < dz2.data.size(); ++i) {
    const double a = st.a2.data[i];
    dz2.data[i] *= 1.0 - a * a;
  }
  Tensor4 da1;
  conv3d_backward(st.a1, m.conv2, dz2, &da1, g.conv2);

  Tensor4 dz1 = da1;
  for (std::size_t i = 0; i < dz1.data.size(); ++i) {
    const double a = st.a1.data[i];
    dz1.data[i] *= 1.0 - a * a;
  }
  conv3d_backward(st.input, m.conv1, dz1, nullptr, g.conv1);
  return g;
}

Tensor4 upsample_nn(const Tensor4& t, int factor) {
  if (factor < 1) throw Error("upsample factor must be >= 1");
  if (factor == 1) return t;
  Shape3 s{t.shape[0] * factor, t.shape[1] * factor, t.shape[2] * factor};
  Tensor4 out(t.channels, s);
  for (int c = 0; c < t.channels; ++c) {
    const double* in = t.chan(c);
    double* o = out.chan(c);
    for (int h = 0; h < s[0]; ++h)
      for (int w = 0; w < s[1]; ++w)
        for (int l = 0; l < s[2]; ++l)
          o[(static_cast<std::size_t>(h) * s[1] + w) * s[2] + l] =
              in[(static_cast<std::size_t>(h / factor) * t.shape[1] + w / factor) * t.shape[2] +
                 l / factor];
  }
  return out;
}

}  // namespace reseg
