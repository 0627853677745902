#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reseg/grid.hpp"

namespace reseg {

// Channel-major dense tensor: data[c][h][w][l], one contiguous block.
struct Tensor4 {
  int channels = 0;
  Shape3 shape{0, 0, 0};
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int c, Shape3 s)
      : channels(c), shape(s),
        data(static_cast<std::size_t>(c) * s[0] * s[1] * s[2], 0.0) {}

  std::size_t plane() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  double* chan(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const double* chan(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }

  double at(int c, int h, int w, int l) const {
    return data[(static_cast<std::size_t>(c) * shape[0] + h) * shape[1] * shape[2] +
                static_cast<std::size_t>(w) * shape[2] + l];
  }
};

// One zero-padded, stride-1 convolution layer with a cubic odd kernel.
struct ConvParams {
  int in_ch = 0, out_ch = 0, kernel = 1;
  std::vector<double> weights;  // [out][in][kh][kw][kl]
  std::vector<double> bias;     // [out]

  static ConvParams make(int in_ch, int out_ch, int kernel);
  std::size_t weight_count() const { return weights.size(); }
};

struct SegModelConfig {
  int in_channels = 1;
  int hidden = 8;
  int classes = 2;
  int kernel = 3;
};

// Three conv layers (tanh, tanh, per-class sigmoid) plus a 1x1x1 deep
// supervision head off the second activation. Fully convolutional, so it runs
// on any patch or whole volume.
struct SegModel {
  SegModelConfig cfg;
  ConvParams conv1, conv2, conv3;
  ConvParams deep;

  static SegModel init(const SegModelConfig& cfg, std::uint64_t seed);
  std::size_t param_count() const;

  // Fixed block order shared with gradients and the optimizer state.
  std::vector<std::vector<double>*> param_blocks();
  std::vector<const std::vector<double>*> param_blocks() const;
};

struct ModelGrads {
  ConvParams conv1, conv2, conv3, deep;

  static ModelGrads zeros_like(const SegModel& m);
  void accumulate(const ModelGrads& o);
  void scale(double s);
  std::vector<std::vector<double>*> param_blocks();
};

// Forward intermediates retained for the hand-written backward pass.
struct ModelState {
  Tensor4 input;
  Tensor4 a1, a2;          // tanh activations
  Tensor4 prob;            // sigmoid(conv3(a2))
  Tensor4 deep_prob;       // sigmoid(deep(a2))
};

ModelState forward(const SegModel& m, const Tensor4& input);

// dprob / ddeep are gradients w.r.t. the two probability outputs. Either may
// be empty (treated as zero). Returns parameter gradients.
ModelGrads backward(const SegModel& m, const ModelState& st, const Tensor4& dprob,
                    const Tensor4& ddeep);

// Nearest-neighbor upsampling by an integer factor per axis; factor 1 is the
// identity. The deep head runs at full resolution here, so this exists for
// shape generality and is exercised in tests.
Tensor4 upsample_nn(const Tensor4& t, int factor);

void conv3d_forward(const Tensor4& x, const ConvParams& p, Tensor4& y);
void conv3d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& dy, Tensor4* dx,
                     ConvParams& dparams);

}  // namespace reseg
