#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "reseg/grid.hpp"
#include "reseg/report.hpp"

namespace reseg {

// Small classifier head mapping 4 intensity statistics to 3 attenuation
// classes (hypo / hyper / mixed_or_iso). Owned by the trainer next to the
// segmentation model; parameters are updated by the same optimizer.
struct AttenuationNet {
  int hidden = 128;
  std::vector<double> w1;  // [hidden][4]
  std::vector<double> b1;  // [hidden]
  std::vector<double> w2;  // [3][hidden]
  std::vector<double> b2;  // [3]

  static AttenuationNet init(std::uint64_t seed, int hidden = 128);

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

struct AttenuationGrads {
  std::vector<double> w1, b1, w2, b2;

  static AttenuationGrads zeros_like(const AttenuationNet& net);
  void accumulate(const AttenuationGrads& other);
};

struct AttenuationConfig {
  double weight_eps = 1e-6;     // skip when soft tumor mass is below this
  bool hard_threshold = false;  // t > threshold instead of soft weights; no prob gradient
  double threshold = 0.5;
  double var_floor = 1e-12;     // keeps sqrt differentiable at zero variance
};

struct AttenuationResult {
  double value = 0.0;
  bool skipped = true;
  std::array<double, 4> features{};  // tumor mean, tumor std, organ mean, organ std
  std::array<double, 3> class_probs{};
  std::vector<double> dprob;         // empty when skipped or hard_threshold
  AttenuationGrads dnet;
};

// Cross-entropy of the classifier on intensity statistics pooled under the
// soft tumor weights t*o and the residual organ weights (1-t)*o. The CT values
// are taken as fed to the model (already normalized). Gradients flow into both
// the classifier parameters and, via the pooling weights, the probability map.
AttenuationResult attenuation_loss(const VolumeGrid& ct, const VolumeGrid& prob,
                                   const BinaryMask& organ, AttenuationClass label,
                                   const AttenuationNet& net, const AttenuationConfig& cfg = {});

}  // namespace reseg
