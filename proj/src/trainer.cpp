#include "reseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "reseg/config.hpp"
#include "reseg/csvio.hpp"
#include "reseg/morphology.hpp"
#include "reseg/volume_io.hpp"

namespace reseg {

namespace {
using nlohmann::json;
namespace fs = std::filesystem;
}

std::vector<int> Corpus::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Corpus Corpus::load(const std::string& manifest_path) {
  const CorpusManifest manifest = read_manifest(manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();
  auto resolve = [&](const std::string& rel) { return dir.empty() ? rel : dir + "/" + rel; };

  Corpus corpus;
  std::map<std::int32_t, std::string> vocab_codes;
  for (const auto& mc : manifest.cases) {
    CaseData c;
    c.id = mc.id;
    c.split = mc.split;
    c.ct = read_scalar_volume(resolve(mc.ct));
    c.organs = read_label_volume(resolve(mc.organs));
    c.report = read_report_file(resolve(mc.report));
    if (c.report.scan_id != c.id)
      throw Error("corpus: report scan_id '" + c.report.scan_id + "' does not match case '" +
                  c.id + "'");
    require_same_grid(c.ct.geometry(), c.organs.geometry(), "corpus case " + c.id);
    for (const auto& [code, name] : c.organs.names()) {
      auto it = vocab_codes.find(code);
      if (it == vocab_codes.end())
        vocab_codes[code] = name;
      else if (it->second != name)
        throw Error("corpus: organ code " + std::to_string(code) + " maps to both '" +
                    it->second + "' and '" + name + "'");
    }
    for (const auto& [organ, rel] : mc.gt) {
      BinaryMask m = read_mask_volume(resolve(rel));
      require_same_grid(c.ct.geometry(), m.geometry(), "corpus gt " + c.id + "/" + organ);
      c.gt.emplace(organ, std::move(m));
    }
    corpus.cases.push_back(std::move(c));
  }
  for (const auto& [code, name] : vocab_codes) corpus.organ_vocab.push_back(name);

  // Reports may only speak about organs the label volumes know.
  for (const auto& c : corpus.cases) {
    std::set<std::string> known;
    for (const auto& [code, name] : c.organs.names()) known.insert(name);
    for (const auto& f : c.report.findings)
      if (!known.contains(f.organ))
        throw Error("corpus: case " + c.id + " reports unknown organ '" + f.organ + "'");
    for (const auto& neg : c.report.negative_organs)
      if (!known.contains(neg))
        throw Error("corpus: case " + c.id + " lists unknown organ '" + neg + "'");
  }
  return corpus;
}

Tensor4 normalize_ct(const VolumeGrid& ct, double hu_lo, double hu_hi) {
  if (!(hu_hi > hu_lo)) throw Error("normalize_ct: window must be increasing");
  Tensor4 t(1, ct.shape());
  const double span = hu_hi - hu_lo;
  for (std::size_t i = 0; i < ct.size(); ++i)
    t.data[i] = (std::clamp(ct[i], hu_lo, hu_hi) - hu_lo) / span;
  return t;
}

AdamW::AdamW(std::vector<std::vector<double>*> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t b = 0; b < params_.size(); ++b) {
    m_[b].assign(params_[b]->size(), 0.0);
    v_[b].assign(params_[b]->size(), 0.0);
  }
  decay_.assign(params_.size(), true);
}

void AdamW::set_decay_mask(std::vector<bool> mask) {
  if (mask.size() != params_.size()) throw Error("AdamW: decay mask size mismatch");
  decay_ = std::move(mask);
}

void AdamW::step(const std::vector<const std::vector<double>*>& grads, double lr_now) {
  if (grads.size() != params_.size()) throw Error("AdamW: gradient block count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params_.size(); ++b) {
    auto& p = *params_[b];
    const auto& g = *grads[b];
    if (g.size() != p.size()) throw Error("AdamW: gradient size mismatch");
    auto& m = m_[b];
    auto& v = v_[b];
    const bool decay = decay_[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (decay) p[i] -= lr_now * wd_ * p[i];  // decoupled decay, not in the moments
      p[i] -= lr_now * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::string AdamW::serialize() const {
  json j;
  j["t"] = t_;
  j["m"] = m_;
  j["v"] = v_;
  return j.dump();
}

void AdamW::restore(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    const auto m = j.at("m").get<std::vector<std::vector<double>>>();
    const auto v = j.at("v").get<std::vector<std::vector<double>>>();
    if (m.size() != m_.size() || v.size() != v_.size())
      throw Error("AdamW: state block count mismatch");
    for (std::size_t b = 0; b < m.size(); ++b)
      if (m[b].size() != m_[b].size() || v[b].size() != v_[b].size())
        throw Error("AdamW: state size mismatch");
    m_ = m;
    v_ = v;
    t_ = j.at("t").get<long long>();
  } catch (const json::exception& e) {
    throw Error(std::string("AdamW: malformed state: ") + e.what());
  }
}

namespace {

std::map<std::string, std::int32_t> organ_codes(const CaseData& c) {
  std::map<std::string, std::int32_t> out;
  for (const auto& [code, name] : c.organs.names()) out[name] = code;
  return out;
}

struct Bounds {
  Index3 lo{0, 0, 0};
  Index3 hi{-1, -1, -1};  // inclusive; empty when hi < lo
  bool empty() const { return hi[0] < lo[0]; }
};

Bounds organ_bounds(const LabelVolume& labels, std::int32_t code) {
  Bounds b;
  b.lo = {labels.shape()[0], labels.shape()[1], labels.shape()[2]};
  for (int h = 0; h < labels.shape()[0]; ++h)
    for (int w = 0; w < labels.shape()[1]; ++w)
      for (int l = 0; l < labels.shape()[2]; ++l) {
        if (labels.at(h, w, l) != code) continue;
        const Index3 p{h, w, l};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = std::min(b.lo[a], p[a]);
          b.hi[a] = std::max(b.hi[a], p[a]);
        }
      }
  return b;
}

}  // namespace

Trainer::Trainer(Corpus corpus, TrainConfig cfg)
    : corpus_(std::move(corpus)),
      cfg_(cfg),
      model_(SegModel::init(
          SegModelConfig{1, cfg.hidden, static_cast<int>(corpus_.organ_vocab.size()), 3},
          mix_seed(cfg.seed, 11))),
      att_(AttenuationNet::init(mix_seed(cfg.seed, 12), cfg.att_hidden)),
      opt_(
          [&] {
            auto blocks = model_.param_blocks();
            blocks.push_back(&att_.w1);
            blocks.push_back(&att_.b1);
            blocks.push_back(&att_.w2);
            blocks.push_back(&att_.b2);
            return blocks;
          }(),
          cfg.lr, cfg.weight_decay),
      rng_(mix_seed(cfg.seed, 13)) {
  if (corpus_.organ_vocab.empty()) throw Error("trainer: corpus has no organs");
  if (cfg_.batch_size < 1 || cfg_.patch < 1 || cfg_.epochs < 0)
    throw Error("trainer: bad batch/patch/epochs");
  if (cfg_.threads < 1) throw Error("trainer: threads must be >= 1");
  if (!(cfg_.p_target_positive >= 0.0 && cfg_.p_target_positive <= 1.0))
    throw Error("trainer: p_target_positive out of range");

  // Weight decay touches weights only, never biases; order matches the
  // optimizer block list above.
  opt_.set_decay_mask({true, false, true, false, true, false, true, false,
                       true, false, true, false});

  train_cases_ = corpus_.split_indices("train");

  // Mask-visible cases: tumor-bearing training cases in id order, truncated
  // to mask_count when positive.
  for (int idx : train_cases_) {
    const auto& c = corpus_.cases[idx];
    bool has_tumor = false;
    for (const auto& [organ, m] : c.gt) has_tumor |= m.count() > 0;
    if (has_tumor) mask_cases_.push_back(idx);
  }
  if (cfg_.mask_count > 0 && static_cast<std::size_t>(cfg_.mask_count) < mask_cases_.size())
    mask_cases_.resize(cfg_.mask_count);
  if (cfg_.supervision != Supervision::reports_only && mask_cases_.empty())
    throw Error("trainer: mask supervision requested but no tumor cases with masks");
}

long long Trainer::steps_per_epoch() const {
  const auto n = std::max<std::size_t>(1, train_cases_.size());
  return static_cast<long long>((n + cfg_.batch_size - 1) / cfg_.batch_size);
}

double Trainer::learning_rate_at(long long step) const {
  const long long spe = steps_per_epoch();
  const long long total = cfg_.epochs * spe;
  const long long warm = std::min<long long>(cfg_.warmup_epochs * spe, total);
  if (step < warm) return cfg_.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total <= warm) return cfg_.lr;
  const double frac =
      static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return cfg_.lr * std::pow(1.0 - std::min(frac, 1.0), cfg_.poly_power);
}

int Trainer::pick_case(Rng& rng) const {
  if (train_cases_.empty()) throw Error("trainer: no training cases");
  switch (cfg_.supervision) {
    case Supervision::reports_only:
      return train_cases_[rng.uniform_int(0, static_cast<int>(train_cases_.size()) - 1)];
    case Supervision::masks_only:
      return mask_cases_[rng.uniform_int(0, static_cast<int>(mask_cases_.size()) - 1)];
    case Supervision::reports_and_masks:
      if (rng.bernoulli(cfg_.p_mask_batch))
        return mask_cases_[rng.uniform_int(0, static_cast<int>(mask_cases_.size()) - 1)];
      return train_cases_[rng.uniform_int(0, static_cast<int>(train_cases_.size()) - 1)];
  }
  throw Error("trainer: invalid supervision mode");
}

PatchSample Trainer::sample_patch(int case_index, Rng& rng) const {
  const CaseData& c = corpus_.cases.at(case_index);
  const Shape3 dims = c.ct.shape();
  const int P = cfg_.patch;
  for (int a = 0; a < 3; ++a)
    if (P > dims[a]) throw Error("trainer: patch larger than volume");

  const auto codes = organ_codes(c);

  // Target organ: mostly the reported-positive ones, sometimes a clean organ.
  std::vector<std::string> positives, negatives;
  const auto pos_set = c.report.positive_organs();
  for (const auto& organ : corpus_.organ_vocab) {
    if (!codes.contains(organ)) continue;
    (pos_set.contains(organ) ? positives : negatives).push_back(organ);
  }
  std::string target;
  if (!positives.empty() && !negatives.empty()) {
    const bool take_pos = rng.bernoulli(cfg_.p_target_positive);
    const auto& pool = take_pos ? positives : negatives;
    target = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
  } else if (!positives.empty()) {
    target = positives[rng.uniform_int(0, static_cast<int>(positives.size()) - 1)];
  } else if (!negatives.empty()) {
    target = negatives[rng.uniform_int(0, static_cast<int>(negatives.size()) - 1)];
  } else {
    throw Error("trainer: case " + c.id + " has no organs in the vocabulary");
  }

  // Window must contain the whole target organ; sample uniformly among the
  // feasible origins.
  const Bounds b = organ_bounds(c.organs, codes.at(target));
  if (b.empty()) throw Error("trainer: organ " + target + " absent from case " + c.id);
  PatchSample s;
  s.case_index = case_index;
  s.target_organ = target;
  for (int a = 0; a < 3; ++a) {
    const int lo = std::max(0, b.hi[a] + 1 - P);
    const int hi = std::min(b.lo[a], dims[a] - P);
    if (lo > hi)
      throw Error("trainer: organ " + target + " in case " + c.id +
                  " does not fit the patch size");
    s.origin[a] = rng.uniform_int(lo, hi);
  }

  const Shape3 pshape{P, P, P};
  const Spacing3 spc = c.ct.spacing();
  s.input = Tensor4(1, pshape);
  {
    const Tensor4 full = normalize_ct(c.ct, cfg_.hu_lo, cfg_.hu_hi);
    for (int h = 0; h < P; ++h)
      for (int w = 0; w < P; ++w)
        for (int l = 0; l < P; ++l)
          s.input.data[(static_cast<std::size_t>(h) * P + w) * P + l] =
              full.data[c.ct.geometry().index(h + s.origin[0], w + s.origin[1],
                                              l + s.origin[2])];
  }
  for (const auto& organ : corpus_.organ_vocab) {
    BinaryMask m(pshape, spc);
    if (codes.contains(organ)) {
      const auto code = codes.at(organ);
      for (int h = 0; h < P; ++h)
        for (int w = 0; w < P; ++w)
          for (int l = 0; l < P; ++l)
            m.set(m.geometry().index(h, w, l),
                  c.organs.at(h + s.origin[0], w + s.origin[1], l + s.origin[2]) == code);
    }
    s.organ_masks.emplace(organ, std::move(m));
  }

  const bool is_mask_case =
      std::find(mask_cases_.begin(), mask_cases_.end(), case_index) != mask_cases_.end();
  s.use_gt = cfg_.supervision != Supervision::reports_only && is_mask_case;
  if (s.use_gt) {
    for (const auto& organ : corpus_.organ_vocab) {
      BinaryMask m(pshape, spc);
      auto it = c.gt.find(organ);
      if (it != c.gt.end()) {
        for (int h = 0; h < P; ++h)
          for (int w = 0; w < P; ++w)
            for (int l = 0; l < P; ++l)
              m.set(m.geometry().index(h, w, l),
                    it->second.test(it->second.geometry().index(
                        h + s.origin[0], w + s.origin[1], l + s.origin[2])));
      }
      s.gt_masks.emplace(organ, std::move(m));
    }
  }
  return s;
}

namespace {

VolumeGrid channel_grid(const Tensor4& t, int c, Spacing3 spacing) {
  VolumeGrid g(t.shape, spacing);
  const double* src = t.chan(c);
  std::copy(src, src + t.plane(), g.data().begin());
  return g;
}

void add_channel_grad(Tensor4& dst, int c, const std::vector<double>& grad, double weight) {
  double* d = dst.chan(c);
  for (std::size_t i = 0; i < grad.size(); ++i) d[i] += weight * grad[i];
}

}  // namespace

StepMetrics Trainer::train_step(const std::vector<PatchSample>& batch) {
  if (batch.empty()) throw Error("trainer: empty batch");
  StepMetrics ms;
  ModelGrads acc = ModelGrads::zeros_like(model_);
  AttenuationGrads att_acc = AttenuationGrads::zeros_like(att_);

  for (const PatchSample& s : batch) {
    const CaseData& c = corpus_.cases.at(s.case_index);
    const ModelState st = forward(model_, s.input);
    Tensor4 dprob(st.prob.channels, st.prob.shape);
    Tensor4 ddeep(st.deep_prob.channels, st.deep_prob.shape);
    const Spacing3 spc = c.ct.spacing();
    const auto reported = reported_volume_per_organ(c.report);
    SampleDiag sd;
    sd.scan_id = c.id;

    for (int ch = 0; ch < static_cast<int>(corpus_.organ_vocab.size()); ++ch) {
      const std::string& organ = corpus_.organ_vocab[ch];
      const BinaryMask& om = s.organ_masks.at(organ);
      const VolumeGrid prob = channel_grid(st.prob, ch, spc);

      if (s.use_gt) {
        const BinaryMask& gt = s.gt_masks.at(organ);
        const LossResult sup = supervised_loss(prob, gt);
        ms.supervised += cfg_.w_supervised * sup.value;
        sd.supervised += sup.value;
        add_channel_grad(dprob, ch, sup.grad, cfg_.w_supervised);
        const VolumeGrid dprob_deep = channel_grid(st.deep_prob, ch, spc);
        const LossResult supd = supervised_loss(dprob_deep, gt);
        ms.supervised += cfg_.w_supervised * supd.value;
        sd.supervised += supd.value;
        add_channel_grad(ddeep, ch, supd.grad, cfg_.w_supervised);
        continue;
      }

      const bool is_target = organ == s.target_organ;
      const bool is_positive = c.report.positive_organs().contains(organ);
      const bool is_negative =
          std::find(c.report.negative_organs.begin(), c.report.negative_organs.end(), organ) !=
          c.report.negative_organs.end();

      if (is_target) {
        // Findings translated into patch coordinates.
        std::vector<TumorFinding> findings;
        for (const auto& f : c.report.findings) {
          if (f.organ != organ) continue;
          TumorFinding g = f;
          if (g.slice) g.slice = *g.slice - s.origin[0];
          findings.push_back(std::move(g));
        }

        // Volume target; organs reported clean have a hard target of zero.
        std::optional<double> v_r;
        bool gate_volume = !findings.empty();
        std::vector<SliceGate> gates;
        for (const auto& f : findings) {
          if (!f.slice) gate_volume = false;
          const double d = f.diameters_mm.empty() ? kMinTumorDiameterMm : f.diameters_mm[0];
          if (f.slice) gates.push_back({*f.slice, d});
        }
        if (findings.empty()) {
          v_r = 0.0;
        } else {
          const auto& rv = reported.at(organ);
          if (rv.volume_known) v_r = rv.volume_mm3;
        }
        // Slices pin down where tumor volume can live, but only when every
        // finding has one; otherwise an unlocated tumor would be suppressed.
        const BinaryMask vol_region = gate_volume ? gate_slices(om, gates) : om;

        const LossResult vol = volume_loss(prob, vol_region, v_r, cfg_.volume);
        ms.volume += cfg_.w_volume * vol.value;
        sd.volume += vol.value;
        if (auto it = vol.diag.find("V_s"); it != vol.diag.end()) sd.v_s_mm3[organ] = it->second;
        add_channel_grad(dprob, ch, vol.grad, cfg_.w_volume);
        const VolumeGrid dprobd = channel_grid(st.deep_prob, ch, spc);
        const LossResult vold = volume_loss(dprobd, vol_region, v_r, cfg_.volume);
        ms.volume += cfg_.w_volume * vold.value;
        sd.volume += vold.value;
        add_channel_grad(ddeep, ch, vold.grad, cfg_.w_volume);

        const LossResult ball =
            ball_loss(prob, om, findings, c.report.organ_count_known(organ), cfg_.ball);
        ms.ball += cfg_.w_ball * ball.value;
        sd.ball += ball.value;
        add_channel_grad(dprob, ch, ball.grad, cfg_.w_ball);

        if (!findings.empty()) {
          // One attenuation label per organ; the phantom guarantees findings
          // agree, real reports would too at this granularity.
          const AttenuationClass label = findings.front().attenuation;
          const VolumeGrid ct_grid = channel_grid(s.input, 0, spc);
          const AttenuationResult att =
              attenuation_loss(ct_grid, prob, om, label, att_, cfg_.attenuation);
          if (!att.skipped) {
            ms.attenuation += cfg_.w_attenuation * att.value;
            sd.attenuation += att.value;
            if (!att.dprob.empty()) add_channel_grad(dprob, ch, att.dprob, cfg_.w_attenuation);
            AttenuationGrads scaled = att.dnet;
            for (auto* blk : {&scaled.w1, &scaled.b1, &scaled.w2, &scaled.b2})
              for (double& v : *blk) v *= cfg_.w_attenuation;
            att_acc.accumulate(scaled);
          }
          const AttenuationResult attd =
              attenuation_loss(ct_grid, dprobd, om, label, att_, cfg_.attenuation);
          if (!attd.skipped) {
            ms.attenuation += cfg_.w_attenuation * attd.value;
            sd.attenuation += attd.value;
            if (!attd.dprob.empty()) add_channel_grad(ddeep, ch, attd.dprob, cfg_.w_attenuation);
            AttenuationGrads scaled = attd.dnet;
            for (auto* blk : {&scaled.w1, &scaled.b1, &scaled.w2, &scaled.b2})
              for (double& v : *blk) v *= cfg_.w_attenuation;
            att_acc.accumulate(scaled);
          }
        }
      } else if (is_negative && !is_positive) {
        // Visible part of another clean organ: cheap per-voxel push to zero.
        const LossResult ce = ball_loss(prob, om, {}, true, cfg_.ball);
        ms.ball += cfg_.w_ball * ce.value;
        sd.ball += ce.value;
        add_channel_grad(dprob, ch, ce.grad, cfg_.w_ball);
      }
      // Reported-positive organs that are not the target are skipped: the
      // patch may clip them, which would corrupt their volume and count
      // supervision.
    }

    const ModelGrads g = backward(model_, st, dprob, ddeep);
    acc.accumulate(g);
    ms.samples.push_back(std::move(sd));
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  acc.scale(inv_b);
  for (auto* blk : {&att_acc.w1, &att_acc.b1, &att_acc.w2, &att_acc.b2})
    for (double& v : *blk) v *= inv_b;
  ms.supervised *= inv_b;
  ms.volume *= inv_b;
  ms.ball *= inv_b;
  ms.attenuation *= inv_b;
  ms.total = ms.supervised + ms.volume + ms.ball + ms.attenuation;

  // Global norm across every parameter gradient, then one shared clip.
  double norm2 = 0.0;
  for (const auto* blk : acc.param_blocks())
    for (double v : *blk) norm2 += v * v;
  for (const auto* blk : {&att_acc.w1, &att_acc.b1, &att_acc.w2, &att_acc.b2})
    for (double v : *blk) norm2 += v * v;
  ms.grad_norm = std::sqrt(norm2);
  if (cfg_.clip_norm > 0.0 && ms.grad_norm > cfg_.clip_norm) {
    const double sc = cfg_.clip_norm / ms.grad_norm;
    acc.scale(sc);
    for (auto* blk : {&att_acc.w1, &att_acc.b1, &att_acc.w2, &att_acc.b2})
      for (double& v : *blk) v *= sc;
  }

  ms.lr = learning_rate_at(opt_.steps_taken());
  std::vector<const std::vector<double>*> gblocks;
  for (auto* blk : acc.param_blocks()) gblocks.push_back(blk);
  gblocks.push_back(&att_acc.w1);
  gblocks.push_back(&att_acc.b1);
  gblocks.push_back(&att_acc.w2);
  gblocks.push_back(&att_acc.b2);
  opt_.step(gblocks, ms.lr);
  return ms;
}

void Trainer::train(const std::string& metrics_csv, const std::string& diag_csv) {
  std::unique_ptr<CsvWriter> csv;
  if (!metrics_csv.empty())
    csv = std::make_unique<CsvWriter>(
        metrics_csv, std::vector<std::string>{"step", "epoch", "lr", "loss_total",
                                              "loss_supervised", "loss_volume", "loss_ball",
                                              "loss_attenuation", "grad_norm"});
  std::unique_ptr<CsvWriter> diag;
  if (!diag_csv.empty()) {
    std::vector<std::string> cols{"step", "scan_id", "L_sup", "L_vol", "L_ball", "L_att"};
    for (const auto& organ : corpus_.organ_vocab) cols.push_back("V_s_" + organ);
    diag = std::make_unique<CsvWriter>(diag_csv, cols);
  }
  const long long spe = steps_per_epoch();
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (long long step = 0; step < spe; ++step) {
      std::vector<PatchSample> batch;
      batch.reserve(cfg_.batch_size);
      for (int b = 0; b < cfg_.batch_size; ++b) batch.push_back(sample_patch(pick_case(rng_), rng_));
      const StepMetrics ms = train_step(batch);
      const long long global_step = static_cast<long long>(epoch) * spe + step;
      if (csv)
        csv->write_row({global_step, static_cast<long long>(epoch), ms.lr, ms.total,
                        ms.supervised, ms.volume, ms.ball, ms.attenuation, ms.grad_norm});
      if (diag)
        for (const SampleDiag& sd : ms.samples) {
          std::vector<CsvCell> row{global_step, sd.scan_id, sd.supervised,
                                   sd.volume,   sd.ball,    sd.attenuation};
          for (const auto& organ : corpus_.organ_vocab) {
            const auto it = sd.v_s_mm3.find(organ);
            row.push_back(it == sd.v_s_mm3.end() ? CsvCell{std::string{}} : CsvCell{it->second});
          }
          diag->write_row(row);
        }
    }
  }
}

Tensor4 Trainer::infer(const CaseData& c) const {
  const Tensor4 input = normalize_ct(c.ct, cfg_.hu_lo, cfg_.hu_hi);
  return forward(model_, input).prob;
}

void Trainer::save_checkpoint(const std::string& path, const std::string& config_hash) const {
  json j;
  j["format"] = "reseg-checkpoint-1";
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["organ_vocab"] = corpus_.organ_vocab;
  j["train_config"] = json::parse(train_config_to_json_text(cfg_));
  json mj;
  mj["conv1_w"] = model_.conv1.weights;
  mj["conv1_b"] = model_.conv1.bias;
  mj["conv2_w"] = model_.conv2.weights;
  mj["conv2_b"] = model_.conv2.bias;
  mj["conv3_w"] = model_.conv3.weights;
  mj["conv3_b"] = model_.conv3.bias;
  mj["deep_w"] = model_.deep.weights;
  mj["deep_b"] = model_.deep.bias;
  j["model"] = mj;
  json aj;
  aj["w1"] = att_.w1;
  aj["b1"] = att_.b1;
  aj["w2"] = att_.w2;
  aj["b2"] = att_.b2;
  j["attenuation"] = aj;
  j["adam"] = opt_.serialize();
  j["rng"] = rng_.save_state();
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << j.dump() << '\n';
}

Trainer Trainer::load_checkpoint(const std::string& path, Corpus corpus) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "reseg-checkpoint-1")
      throw Error("unsupported checkpoint format in " + path);
    const auto vocab = j.at("organ_vocab").get<std::vector<std::string>>();
    if (vocab != corpus.organ_vocab)
      throw Error("checkpoint organ vocabulary does not match the corpus");
    const TrainConfig cfg = train_config_from_json_text(j.at("train_config").dump());
    Trainer t(std::move(corpus), cfg);
    const auto& mj = j.at("model");
    auto load_block = [&](const char* key, std::vector<double>& dst) {
      const auto v = mj.at(key).get<std::vector<double>>();
      if (v.size() != dst.size()) throw Error(std::string("checkpoint block size mismatch: ") + key);
      dst = v;
    };
    load_block("conv1_w", t.model_.conv1.weights);
    load_block("conv1_b", t.model_.conv1.bias);
    load_block("conv2_w", t.model_.conv2.weights);
    load_block("conv2_b", t.model_.conv2.bias);
    load_block("conv3_w", t.model_.conv3.weights);
    load_block("conv3_b", t.model_.conv3.bias);
    load_block("deep_w", t.model_.deep.weights);
    load_block("deep_b", t.model_.deep.bias);
    const auto& aj = j.at("attenuation");
    t.att_.w1 = aj.at("w1").get<std::vector<double>>();
    t.att_.b1 = aj.at("b1").get<std::vector<double>>();
    t.att_.w2 = aj.at("w2").get<std::vector<double>>();
    t.att_.b2 = aj.at("b2").get<std::vector<double>>();
    t.opt_.restore(j.at("adam").get<std::string>());
    t.rng_.load_state(j.at("rng").get<std::string>());
    return t;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
}

std::vector<RankedCase> rank_for_annotation(const Corpus& corpus,
                                            const std::map<std::string, Tensor4>& preds,
                                            const BallLossConfig& cfg) {
  std::vector<RankedCase> out;
  for (const auto& c : corpus.cases) {
    auto it = preds.find(c.id);
    if (it == preds.end()) throw Error("rank: missing prediction for case " + c.id);
    const Tensor4& prob = it->second;
    if (prob.channels != static_cast<int>(corpus.organ_vocab.size()) ||
        !(prob.shape == c.ct.shape()))
      throw Error("rank: prediction shape mismatch for case " + c.id);

    const auto codes = organ_codes(c);
    double score = 0.0;
    for (int ch = 0; ch < prob.channels; ++ch) {
      const std::string& organ = corpus.organ_vocab[ch];
      if (!codes.contains(organ)) continue;
      const BinaryMask om = mask_for_code(c.organs, codes.at(organ));
      std::vector<TumorFinding> findings;
      for (const auto& f : c.report.findings)
        if (f.organ == organ) findings.push_back(f);
      const bool negative =
          std::find(c.report.negative_organs.begin(), c.report.negative_organs.end(), organ) !=
          c.report.negative_organs.end();
      if (findings.empty() && !negative) continue;  // organ unmentioned: no signal
      const VolumeGrid pg = channel_grid(prob, ch, c.ct.spacing());
      score += ball_loss(pg, om, findings, c.report.organ_count_known(organ), cfg).value;
    }
    out.push_back({c.id, score});
  }
  std::sort(out.begin(), out.end(), [](const RankedCase& a, const RankedCase& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

}  // namespace reseg
