#include "reseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "reseg/rng.hpp"
#include "reseg/volume_io.hpp"

namespace reseg {

namespace {
using nlohmann::json;
namespace fs = std::filesystem;
}  // namespace

PhantomSpec PhantomSpec::desk_default() {
  PhantomSpec s;

  OrganSpec spleen;
  spleen.code = 1;
  spleen.name = "spleen";
  spleen.center_mm = {48.0, 32.0, 32.0};
  spleen.radii_mm = {20.0, 15.0, 14.0};
  spleen.base_hu = 80.0;
  spleen.center_jitter_mm = 2.0;
  spleen.radii_jitter_frac = 0.08;
  spleen.count_probs = {0.35, 0.40, 0.25};
  spleen.tumor_diameter_mm = {8.0, 18.0};
  spleen.tumor_offset_hu = {30.0, 60.0};

  OrganSpec gb;
  gb.code = 2;
  gb.name = "gallbladder";
  gb.center_mm = {48.0, 66.0, 64.0};
  gb.radii_mm = {13.0, 11.0, 10.0};
  gb.base_hu = 40.0;
  gb.center_jitter_mm = 2.0;
  gb.radii_jitter_frac = 0.08;
  gb.count_probs = {0.50, 0.30, 0.20};
  gb.tumor_diameter_mm = {6.0, 12.0};
  gb.tumor_offset_hu = {30.0, 60.0};

  s.organs = {spleen, gb};
  return s;
}

void PhantomSpec::validate() const {
  GridGeometry{shape, spacing}.validate();
  if (organs.empty()) throw Error("phantom: at least one organ required");
  if (!(clip_hu[0] < clip_hu[1])) throw Error("phantom: clip range must be increasing");
  if (noise_hu < 0.0) throw Error("phantom: negative noise");
  std::set<std::int32_t> codes;
  std::set<std::string> names;
  for (const auto& o : organs) {
    if (o.code <= 0) throw Error("phantom: organ codes must be positive");
    if (!codes.insert(o.code).second) throw Error("phantom: duplicate organ code");
    if (o.name.empty() || !names.insert(o.name).second)
      throw Error("phantom: organ names must be unique and non-empty");
    if (o.count_probs.empty()) throw Error("phantom: empty count distribution");
    double sum = 0.0;
    for (double p : o.count_probs) {
      if (p < 0.0) throw Error("phantom: negative count probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("phantom: count probabilities must sum to 1");
    if (!(o.tumor_diameter_mm[0] > 0.0) || !(o.tumor_diameter_mm[1] >= o.tumor_diameter_mm[0]))
      throw Error("phantom: bad tumor diameter range");
    if (o.axis_ratio_max < 1.0) throw Error("phantom: axis ratio max must be >= 1");
    for (int a = 0; a < 3; ++a)
      if (!(o.radii_mm[a] > 0.0)) throw Error("phantom: organ radii must be positive");
  }
  const auto& rn = report_noise;
  if (rn.diameter_rel_sigma < 0 || rn.slice_sigma_vox < 0 || rn.p_size_missing < 0 ||
      rn.p_size_missing > 1 || rn.p_count_unknown < 0 || rn.p_count_unknown > 1)
    throw Error("phantom: bad report noise parameters");
  if (placement_retries < 1) throw Error("phantom: placement_retries must be positive");
}

namespace {

struct PlacedOrgan {
  const OrganSpec* spec;
  std::array<double, 3> center;  // jittered, mm
  std::array<double, 3> radii;
};

struct PlacedTumor {
  int organ_index;
  std::array<double, 3> center;
  std::array<double, 3> semi;    // per axis, mm
  double offset_hu;
  AttenuationClass cls;
};

int draw_count(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

// Containment test: the tumor ellipsoid lies fully inside the organ ellipsoid
// if sum(((|dc_i| + a_i) / R_i)^2) <= 1 (sufficient, not tight).
bool tumor_fits(const PlacedOrgan& organ, const std::array<double, 3>& center,
                const std::array<double, 3>& semi) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double reach = std::abs(center[a] - organ.center[a]) + semi[a];
    acc += (reach / organ.radii[a]) * (reach / organ.radii[a]);
  }
  return acc <= 1.0;
}

}  // namespace

PhantomCase generate(const PhantomSpec& spec, std::uint64_t seed,
                     std::optional<bool> force_tumor) {
  spec.validate();

  Rng rng_layout(mix_seed(seed, 1));
  Rng rng_tumor(mix_seed(seed, 2));
  Rng rng_noise(mix_seed(seed, 3));
  Rng rng_report(mix_seed(seed, 4));

  // Per-case organ layout jitter keeps the corpus from collapsing onto one
  // geometry. Draw order is fixed by the organ list.
  std::vector<PlacedOrgan> organs;
  for (const auto& os : spec.organs) {
    PlacedOrgan po{&os, os.center_mm, os.radii_mm};
    for (int a = 0; a < 3; ++a)
      po.center[a] += rng_layout.uniform(-os.center_jitter_mm, os.center_jitter_mm);
    for (int a = 0; a < 3; ++a)
      po.radii[a] *= rng_layout.uniform(1.0 - os.radii_jitter_frac, 1.0 + os.radii_jitter_frac);
    organs.push_back(po);
  }

  // Tumor counts, possibly constrained by the caller.
  std::vector<int> counts(organs.size(), 0);
  if (force_tumor && !*force_tumor) {
    // healthy case: all zero
  } else {
    for (int attempt = 0;; ++attempt) {
      int total = 0;
      for (std::size_t i = 0; i < organs.size(); ++i) {
        counts[i] = draw_count(organs[i].spec->count_probs, rng_tumor);
        total += counts[i];
      }
      if (!force_tumor || !*force_tumor || total > 0) break;
      if (attempt > 1000) {
        counts.assign(organs.size(), 0);
        counts[0] = 1;
        break;
      }
    }
  }

  // Place tumors. Each organ draws one attenuation polarity per case so the
  // per-organ attenuation label stays well defined with multiple tumors. An
  // early large tumor can make the rest of its organ infeasible, so on
  // failure the whole organ's set is discarded and redrawn; the retry budget
  // is spread over those passes.
  std::vector<PlacedTumor> tumors;
  constexpr int kAttemptsPerPass = 25;
  for (std::size_t oi = 0; oi < organs.size(); ++oi) {
    const PlacedOrgan& po = organs[oi];
    const OrganSpec& os = *po.spec;
    const bool hyper = rng_tumor.bernoulli(0.5);
    const int passes = std::max(1, spec.placement_retries / kAttemptsPerPass);
    std::vector<PlacedTumor> organ_tumors;
    bool all_placed = counts[oi] == 0;
    for (int pass = 0; pass < passes && !all_placed; ++pass) {
      organ_tumors.clear();
      all_placed = true;
      for (int t = 0; t < counts[oi] && all_placed; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttemptsPerPass && !placed; ++attempt) {
          const double d1 = rng_tumor.uniform(os.tumor_diameter_mm[0], os.tumor_diameter_mm[1]);
          const double d2 = d1 / rng_tumor.uniform(1.0, os.axis_ratio_max);
          const double d3 = d1 / rng_tumor.uniform(1.0, os.axis_ratio_max);
          double diam[3] = {d1, d2, d3};
          // Random assignment of the drawn diameters to grid axes.
          const int perm = rng_tumor.uniform_int(0, 5);
          constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                        {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
          std::array<double, 3> semi{};
          for (int a = 0; a < 3; ++a) semi[a] = 0.5 * diam[kPerms[perm][a]];

          std::array<double, 3> center{};
          for (int a = 0; a < 3; ++a)
            center[a] = po.center[a] + rng_tumor.uniform(-po.radii[a], po.radii[a]);
          if (!tumor_fits(po, center, semi)) continue;

          bool separated = true;
          for (const auto& other : organ_tumors) {
            const double ra = *std::max_element(semi.begin(), semi.end());
            const double rb = *std::max_element(other.semi.begin(), other.semi.end());
            double dist2 = 0.0;
            for (int a = 0; a < 3; ++a) {
              const double d = center[a] - other.center[a];
              dist2 += d * d;
            }
            if (dist2 < (ra + rb + 2.0) * (ra + rb + 2.0)) {
              separated = false;
              break;
            }
          }
          if (!separated) continue;

          PlacedTumor pt;
          pt.organ_index = static_cast<int>(oi);
          pt.center = center;
          pt.semi = semi;
          pt.offset_hu = rng_tumor.uniform(os.tumor_offset_hu[0], os.tumor_offset_hu[1]) *
                         (hyper ? 1.0 : -1.0);
          pt.cls = hyper ? AttenuationClass::hyper : AttenuationClass::hypo;
          organ_tumors.push_back(pt);
          placed = true;
        }
        all_placed = placed;
      }
    }
    if (!all_placed)
      throw Error("phantom: could not place " + std::to_string(counts[oi]) + " tumors in organ " +
                  os.name + " after " + std::to_string(spec.placement_retries) + " retries");
    tumors.insert(tumors.end(), organ_tumors.begin(), organ_tumors.end());
  }

  // Voxelize. Voxel centers sit at (i + 0.5) * spacing.
  PhantomCase out;
  out.id = "case_" + std::to_string(seed);
  std::map<std::int32_t, std::string> names;
  for (const auto& os : spec.organs) names[os.code] = os.name;
  out.organs = LabelVolume(spec.shape, spec.spacing, names);
  out.ct = VolumeGrid(spec.shape, spec.spacing, spec.background_hu);
  for (const auto& os : spec.organs)
    out.gt_tumor_masks.emplace(os.name, BinaryMask(spec.shape, spec.spacing));

  auto inside = [](const std::array<double, 3>& p, const std::array<double, 3>& c,
                   const std::array<double, 3>& r) {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (p[a] - c[a]) / r[a];
      acc += d * d;
    }
    return acc <= 1.0;
  };

  for (int h = 0; h < spec.shape[0]; ++h)
    for (int w = 0; w < spec.shape[1]; ++w)
      for (int l = 0; l < spec.shape[2]; ++l) {
        const std::array<double, 3> p = {(h + 0.5) * spec.spacing[0], (w + 0.5) * spec.spacing[1],
                                         (l + 0.5) * spec.spacing[2]};
        int organ_at = -1;
        for (std::size_t oi = 0; oi < organs.size(); ++oi) {
          if (inside(p, organs[oi].center, organs[oi].radii)) {
            if (organ_at >= 0) throw Error("phantom: organs overlap; adjust layout or jitter");
            organ_at = static_cast<int>(oi);
          }
        }
        if (organ_at < 0) continue;
        const OrganSpec& os = *organs[organ_at].spec;
        out.organs.at(h, w, l) = os.code;
        double hu = os.base_hu;
        for (const auto& t : tumors) {
          if (t.organ_index == organ_at && inside(p, t.center, t.semi)) {
            hu = os.base_hu + t.offset_hu;
            out.gt_tumor_masks.at(os.name).set(h, w, l, true);
            break;
          }
        }
        out.ct.at(h, w, l) = hu;
      }

  for (std::size_t i = 0; i < out.ct.size(); ++i) {
    const double v = out.ct[i] + rng_noise.normal(0.0, spec.noise_hu);
    out.ct[i] = std::clamp(v, spec.clip_hu[0], spec.clip_hu[1]);
  }

  // Ground-truth bookkeeping.
  for (const auto& t : tumors) {
    TumorTruth tt;
    tt.organ = spec.organs[t.organ_index].name;
    tt.center_mm = t.center;
    for (int a = 0; a < 3; ++a) {
      tt.diameters_mm[a] = 2.0 * t.semi[a];
      tt.center_vox[a] = std::clamp(static_cast<int>(t.center[a] / spec.spacing[a]), 0,
                                    spec.shape[a] - 1);
    }
    tt.offset_hu = t.offset_hu;
    tt.attenuation = t.cls;
    out.truth.push_back(tt);
  }

  // The written report: measured diameters and slice positions wobble, some
  // findings lose their sizes, some organs their count reliability.
  StructuredReport& rep = out.report;
  rep.scan_id = out.id;
  const auto& rn = spec.report_noise;
  for (const auto& tt : out.truth) {
    TumorFinding f;
    f.organ = tt.organ;
    f.attenuation = tt.attenuation;
    std::vector<double> d(tt.diameters_mm.begin(), tt.diameters_mm.end());
    std::sort(d.begin(), d.end(), std::greater<>());
    const bool sized = !rng_report.bernoulli(rn.p_size_missing);
    if (sized) {
      for (double& x : d) x *= std::max(0.2, 1.0 + rng_report.normal(0.0, rn.diameter_rel_sigma));
      f.diameters_mm = d;
    }
    const int z = tt.center_vox[0] +
                  static_cast<int>(std::llround(rng_report.normal(0.0, rn.slice_sigma_vox)));
    f.slice = std::clamp(z, 0, spec.shape[0] - 1);
    rep.findings.push_back(std::move(f));
  }
  const auto positives = rep.positive_organs();
  for (const auto& os : spec.organs) {
    if (positives.contains(os.name)) {
      rep.count_known[os.name] = !rng_report.bernoulli(rn.p_count_unknown);
    } else {
      rep.negative_organs.push_back(os.name);
    }
  }
  return out;
}

namespace {

std::string case_file(const std::string& id, const std::string& what) {
  return id + "." + what + ".vol";
}

}  // namespace

CorpusManifest write_corpus(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                            const std::string& out_dir) {
  if (n_train < 0 || n_test < 0) throw Error("write_corpus: negative case count");
  fs::create_directories(out_dir);
  CorpusManifest manifest;

  auto emit = [&](const std::string& split, int index, int global_index) {
    const bool tumor = global_index % 2 == 0;  // alternating keeps splits balanced
    PhantomCase pc = generate(spec, mix_seed(seed, static_cast<std::uint64_t>(global_index) + 10),
                              tumor);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), index);
    pc.id = buf;
    pc.report.scan_id = pc.id;

    CorpusCase cc;
    cc.id = pc.id;
    cc.split = split;
    cc.ct = case_file(pc.id, "ct");
    cc.organs = case_file(pc.id, "organs");
    cc.report = pc.id + ".report.json";
    write_volume(out_dir + "/" + cc.ct, pc.ct);
    write_volume(out_dir + "/" + cc.organs, pc.organs);
    write_report_file(out_dir + "/" + cc.report, pc.report);
    for (const auto& [organ, mask] : pc.gt_tumor_masks) {
      const std::string rel = case_file(pc.id, "gt." + organ);
      write_volume(out_dir + "/" + rel, mask);
      cc.gt[organ] = rel;
    }
    manifest.cases.push_back(std::move(cc));
  };

  for (int i = 0; i < n_train; ++i) emit("train", i, i);
  for (int i = 0; i < n_test; ++i) emit("test", i, n_train + i);

  write_manifest(out_dir + "/manifest.json", manifest);
  return manifest;
}

void write_manifest(const std::string& manifest_path, const CorpusManifest& m) {
  json j;
  j["cases"] = json::array();
  for (const auto& c : m.cases) {
    json cj;
    cj["id"] = c.id;
    cj["split"] = c.split;
    cj["ct"] = c.ct;
    cj["organs"] = c.organs;
    cj["report"] = c.report;
    cj["gt"] = json::object();
    for (const auto& [organ, path] : c.gt) cj["gt"][organ] = path;
    j["cases"].push_back(cj);
  }
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot open for writing: " + manifest_path);
  out << j.dump(2) << '\n';
}

CorpusManifest read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest: " + manifest_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  CorpusManifest m;
  try {
    for (const auto& cj : j.at("cases")) {
      CorpusCase c;
      c.id = cj.at("id").get<std::string>();
      c.split = cj.at("split").get<std::string>();
      if (c.split != "train" && c.split != "test")
        throw Error("manifest: split must be train or test for case " + c.id);
      c.ct = cj.at("ct").get<std::string>();
      c.organs = cj.at("organs").get<std::string>();
      c.report = cj.at("report").get<std::string>();
      if (cj.contains("gt"))
        for (auto it = cj["gt"].begin(); it != cj["gt"].end(); ++it)
          c.gt[it.key()] = it.value().get<std::string>();
      m.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

}  // namespace reseg
