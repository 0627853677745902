#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reseg/grid.hpp"
#include "reseg/report.hpp"

namespace reseg {

// Synthetic abdomen-slab generator. Organs are axis-aligned ellipsoids in a
// uniform background; tumors are smaller ellipsoids fully inside their organ
// with an attenuation offset. Everything is deterministic per (spec, seed).

struct OrganSpec {
  std::int32_t code = 0;
  std::string name;
  std::array<double, 3> center_mm{};   // nominal center, jittered per case
  std::array<double, 3> radii_mm{};    // nominal semi-axes, jittered per case
  double base_hu = 0.0;
  double center_jitter_mm = 0.0;
  double radii_jitter_frac = 0.0;
  std::vector<double> count_probs;     // P(tumor count = k), k = 0..size-1
  std::array<double, 2> tumor_diameter_mm{6.0, 24.0};
  double axis_ratio_max = 1.5;         // largest/smallest tumor axis
  std::array<double, 2> tumor_offset_hu{30.0, 60.0};  // offset magnitude range
};

struct ReportNoise {
  double diameter_rel_sigma = 0.05;  // multiplicative on each reported diameter
  double slice_sigma_vox = 1.0;      // additive on the reported slice index
  double p_size_missing = 0.10;      // finding loses its diameters
  double p_count_unknown = 0.05;     // organ count flagged unreliable
};

struct PhantomSpec {
  Shape3 shape{48, 48, 48};
  Spacing3 spacing{2.0, 2.0, 2.0};
  double background_hu = -900.0;
  double noise_hu = 4.0;
  std::array<double, 2> clip_hu{-1000.0, 1000.0};
  std::vector<OrganSpec> organs;
  ReportNoise report_noise;
  int placement_retries = 2000;

  static PhantomSpec desk_default();
  void validate() const;
};

struct TumorTruth {
  std::string organ;
  std::array<double, 3> center_mm{};
  std::array<double, 3> diameters_mm{};  // per axis (h, w, l)
  double offset_hu = 0.0;
  AttenuationClass attenuation = AttenuationClass::unknown;
  Index3 center_vox{};
};

struct PhantomCase {
  std::string id;
  VolumeGrid ct;            // raw HU
  LabelVolume organs;
  std::map<std::string, BinaryMask> gt_tumor_masks;  // per organ, all organs present
  StructuredReport report;  // noisy, as a radiologist would write it
  std::vector<TumorTruth> truth;
};

// force_tumor: nullopt draws counts from the spec, true redraws until at
// least one tumor exists, false forces a healthy case.
PhantomCase generate(const PhantomSpec& spec, std::uint64_t seed,
                     std::optional<bool> force_tumor = std::nullopt);

struct CorpusCase {
  std::string id;
  std::string split;  // "train" or "test"
  std::string ct;     // paths relative to the manifest directory
  std::string organs;
  std::string report;
  std::map<std::string, std::string> gt;
};

struct CorpusManifest {
  std::vector<CorpusCase> cases;
};

// Writes a balanced corpus (alternating tumor/healthy per split) plus
// manifest.json into out_dir. Returns the manifest it wrote.
CorpusManifest write_corpus(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                            const std::string& out_dir);

CorpusManifest read_manifest(const std::string& manifest_path);
void write_manifest(const std::string& manifest_path, const CorpusManifest& m);

}  // namespace reseg
