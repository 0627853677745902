#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "reseg/attenuation.hpp"
#include "reseg/ballconv.hpp"
#include "reseg/evalkit.hpp"
#include "reseg/grid.hpp"
#include "reseg/losses.hpp"
#include "reseg/model.hpp"
#include "reseg/phantom.hpp"
#include "reseg/report.hpp"
#include "reseg/rng.hpp"

namespace reseg {

enum class Supervision { reports_only, masks_only, reports_and_masks };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-2;   // decoupled, applied to weights only
  double clip_norm = 1.0;       // global norm over model + classifier grads
  int batch_size = 4;
  int patch = 32;               // cubic patch edge in voxels
  int epochs = 10;
  int warmup_epochs = 5;        // linear warmup, then polynomial decay
  double poly_power = 0.9;

  double w_supervised = 1.0;
  double w_volume = 0.1;
  double w_ball = 0.1;
  double w_attenuation = 0.01;

  double hu_lo = -991.0;        // CT window applied before [0,1] normalization
  double hu_hi = 500.0;

  double p_target_positive = 0.9;  // patch target drawn from reported-positive organs
  Supervision supervision = Supervision::reports_only;
  int mask_count = 0;              // tumor cases (by id order) with visible masks; 0 = all
  double p_mask_batch = 0.5;       // chance a batch slot draws from mask cases when mixing

  int hidden = 8;
  int att_hidden = 128;
  std::uint64_t seed = 0;
  int threads = 1;

  VolumeLossConfig volume;
  BallLossConfig ball;
  AttenuationConfig attenuation;
};

// One training case held in memory; desk corpora are small enough for that.
struct CaseData {
  std::string id;
  std::string split;
  VolumeGrid ct;  // raw HU
  LabelVolume organs;
  StructuredReport report;
  std::map<std::string, BinaryMask> gt;  // may be empty per organ
};

struct Corpus {
  std::vector<CaseData> cases;
  std::vector<std::string> organ_vocab;  // class order; from label codes ascending

  std::vector<int> split_indices(const std::string& split) const;
  static Corpus load(const std::string& manifest_path);
};

struct PatchSample {
  int case_index = -1;
  Index3 origin{0, 0, 0};
  std::string target_organ;
  bool use_gt = false;  // supervised loss on this sample (mask route)
  Tensor4 input;        // normalized CT, 1 channel
  std::map<std::string, BinaryMask> organ_masks;  // cropped, every vocab organ
  std::map<std::string, BinaryMask> gt_masks;     // cropped, present iff use_gt
};

// Raw (unweighted) per-sample term values plus the segmented volume the
// volume loss saw per organ, for the diagnostics stream.
struct SampleDiag {
  std::string scan_id;
  double supervised = 0.0, volume = 0.0, ball = 0.0, attenuation = 0.0;
  std::map<std::string, double> v_s_mm3;
};

struct StepMetrics {
  double total = 0.0, supervised = 0.0, volume = 0.0, ball = 0.0, attenuation = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
  double lr = 0.0;
  std::vector<SampleDiag> samples;
};

// AdamW over an explicit list of parameter blocks; state order matches the
// block order given at construction.
class AdamW {
 public:
  AdamW(std::vector<std::vector<double>*> params, double lr, double weight_decay);
  // decay_mask: per block, whether weight decay applies (biases excluded).
  void set_decay_mask(std::vector<bool> mask);
  void step(const std::vector<const std::vector<double>*>& grads, double lr_now);
  long long steps_taken() const { return t_; }

  std::string serialize() const;
  void restore(const std::string& text);

 private:
  std::vector<std::vector<double>*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> decay_;
  double lr_ = 0.0, wd_ = 0.0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
};

class Trainer {
 public:
  Trainer(Corpus corpus, TrainConfig cfg);

  PatchSample sample_patch(int case_index, Rng& rng) const;
  int pick_case(Rng& rng) const;

  StepMetrics train_step(const std::vector<PatchSample>& batch);

  // Runs the full schedule; appends one CSV row per step when metrics_csv is
  // non-empty, and one diagnostics row per (step, sample) when diag_csv is.
  void train(const std::string& metrics_csv = "", const std::string& diag_csv = "");

  double learning_rate_at(long long step) const;
  long long steps_per_epoch() const;

  const SegModel& model() const { return model_; }
  const AttenuationNet& attenuation_net() const { return att_; }
  const TrainConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return corpus_; }

  // Whole-volume inference for one case; channel order follows organ_vocab.
  Tensor4 infer(const CaseData& c) const;

  void save_checkpoint(const std::string& path, const std::string& config_hash = "") const;
  static Trainer load_checkpoint(const std::string& path, Corpus corpus);

 private:
  Corpus corpus_;
  TrainConfig cfg_;
  SegModel model_;
  AttenuationNet att_;
  AdamW opt_;
  Rng rng_;
  std::vector<int> train_cases_;
  std::vector<int> mask_cases_;  // subset carrying visible GT masks

  friend struct TrainerTestAccess;
};

Tensor4 normalize_ct(const VolumeGrid& ct, double hu_lo, double hu_hi);

struct RankedCase {
  std::string id;
  double score = 0.0;  // summed ball loss, higher = more worth annotating
};

// Orders cases by report-vs-prediction disagreement under the ball loss,
// highest first; ties by id. Probability maps come from `preds` (channel
// order = vocab) keyed by case id.
std::vector<RankedCase> rank_for_annotation(const Corpus& corpus,
                                            const std::map<std::string, Tensor4>& preds,
                                            const BallLossConfig& cfg);

}  // namespace reseg
