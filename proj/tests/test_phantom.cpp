#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "reseg/phantom.hpp"
#include "reseg/report.hpp"
#include "reseg/volume_io.hpp"
#include "testutil.hpp"

using namespace reseg;

TEST_CASE("the default spec validates and covers two organs") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  CHECK_NOTHROW(spec.validate());
  REQUIRE(spec.organs.size() == 2);
  CHECK(spec.organs[0].name == "spleen");
  CHECK(spec.organs[0].code == 1);
  CHECK(spec.organs[1].name == "gallbladder");
  CHECK(spec.organs[1].code == 2);
  CHECK(spec.shape == Shape3{48, 48, 48});
  CHECK(spec.spacing == Spacing3{2.0, 2.0, 2.0});
}

TEST_CASE("bad specs are rejected") {
  PhantomSpec spec = PhantomSpec::desk_default();
  spec.organs[0].count_probs = {0.5, 0.2};  // does not sum to 1
  CHECK_THROWS_AS(spec.validate(), Error);

  spec = PhantomSpec::desk_default();
  spec.organs[0].tumor_diameter_mm = {10.0, 8.0};  // inverted range
  CHECK_THROWS_AS(spec.validate(), Error);

  spec = PhantomSpec::desk_default();
  spec.report_noise.p_size_missing = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("generation is bit-identical per seed") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  const PhantomCase a = generate(spec, 77);
  const PhantomCase b = generate(spec, 77);
  CHECK(a.ct.data() == b.ct.data());
  CHECK(a.organs.data() == b.organs.data());
  CHECK(serialize_report(a.report) == serialize_report(b.report));
  REQUIRE(a.truth.size() == b.truth.size());

  const PhantomCase c = generate(spec, 78);
  CHECK(a.ct.data() != c.ct.data());
}

TEST_CASE("forced-healthy cases carry no tumors anywhere") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const PhantomCase c = generate(spec, seed, false);
    CHECK(c.truth.empty());
    CHECK(c.report.findings.empty());
    CHECK(c.report.positive_organs().empty());
    CHECK(c.report.negative_organs.size() == 2);
    for (const auto& [organ, mask] : c.gt_tumor_masks) CHECK(mask.count() == 0);
  }
}

TEST_CASE("forced-tumor cases have at least one finding") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  for (std::uint64_t seed : {4ULL, 5ULL, 6ULL}) {
    const PhantomCase c = generate(spec, seed, true);
    CHECK_FALSE(c.truth.empty());
    CHECK_FALSE(c.report.findings.empty());
    std::size_t gt_total = 0;
    for (const auto& [organ, mask] : c.gt_tumor_masks) gt_total += mask.count();
    CHECK(gt_total > 0);
  }
}

TEST_CASE("tumor voxels sit inside their organ label") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  int checked = 0;
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& os : spec.organs) {
      const auto it = c.gt_tumor_masks.find(os.name);
      REQUIRE(it != c.gt_tumor_masks.end());
      for (std::size_t i = 0; i < it->second.size(); ++i)
        if (it->second.test(i)) {
          CHECK(c.organs[i] == os.code);
          ++checked;
        }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("separate tumors stay disjoint in the ground truth") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& os : spec.organs) {
      std::vector<const TumorTruth*> in_organ;
      for (const auto& tt : c.truth)
        if (tt.organ == os.name) in_organ.push_back(&tt);
      for (std::size_t i = 0; i < in_organ.size(); ++i)
        for (std::size_t j = i + 1; j < in_organ.size(); ++j) {
          double gap = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double d = in_organ[i]->center_mm[a] - in_organ[j]->center_mm[a];
            gap += d * d;
          }
          // Center distance beats the sum of the larger semi-axes plus the
          // 2mm placement gap.
          double ri = 0.0, rj = 0.0;
          for (int a = 0; a < 3; ++a) {
            ri = std::max(ri, in_organ[i]->diameters_mm[a] / 2);
            rj = std::max(rj, in_organ[j]->diameters_mm[a] / 2);
          }
          CHECK(std::sqrt(gap) >= ri + rj + 2.0 - 1e-9);
        }
    }
  }
}

TEST_CASE("tumor hu offsets show up in the image") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  int verified = 0;
  for (std::uint64_t seed = 30; seed < 40 && verified < 5; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& tt : c.truth) {
      const OrganSpec* os = nullptr;
      for (const auto& o : spec.organs)
        if (o.name == tt.organ) os = &o;
      REQUIRE(os != nullptr);
      const double at_center = c.ct.at(tt.center_vox[0], tt.center_vox[1], tt.center_vox[2]);
      const double expected = os->base_hu + tt.offset_hu;
      // Noise is 4 HU; 6 sigma margin.
      CHECK(std::abs(at_center - expected) < 24.0);
      ++verified;
    }
  }
  CHECK(verified >= 5);
}

TEST_CASE("attenuation labels match the offset sign") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  int seen = 0;
  for (std::uint64_t seed = 50; seed < 70; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& tt : c.truth) {
      if (tt.attenuation == AttenuationClass::unknown) continue;
      if (tt.offset_hu < 0) CHECK(tt.attenuation == AttenuationClass::hypo);
      if (tt.offset_hu > 0) CHECK(tt.attenuation == AttenuationClass::hyper);
      CHECK(std::abs(tt.offset_hu) >= 30.0);
      CHECK(std::abs(tt.offset_hu) <= 60.0);
      ++seen;
    }
  }
  CHECK(seen > 10);
}

TEST_CASE("every tumor in one organ shares the case polarity") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  for (std::uint64_t seed = 80; seed < 95; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& os : spec.organs) {
      std::set<int> signs;
      for (const auto& tt : c.truth)
        if (tt.organ == os.name) signs.insert(tt.offset_hu < 0 ? -1 : 1);
      CHECK(signs.size() <= 1);
    }
  }
}

TEST_CASE("reported diameters wobble around the truth") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  std::vector<double> ratios;
  for (std::uint64_t seed = 100; seed < 400 && ratios.size() < 300; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    // Findings are written in truth order.
    REQUIRE(c.report.findings.size() == c.truth.size());
    for (std::size_t i = 0; i < c.truth.size(); ++i) {
      const auto& f = c.report.findings[i];
      if (f.diameters_mm.empty()) continue;
      double truth_max = 0.0;
      for (double d : c.truth[i].diameters_mm) truth_max = std::max(truth_max, d);
      ratios.push_back(f.diameters_mm[0] / truth_max);
    }
  }
  REQUIRE(ratios.size() >= 200);
  double mean = 0.0;
  for (double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  double var = 0.0;
  for (double r : ratios) var += (r - mean) * (r - mean);
  var /= static_cast<double>(ratios.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::sqrt(var) > 0.025);
  CHECK(std::sqrt(var) < 0.075);
}

TEST_CASE("some findings lose their size and some organs their count") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  int sized = 0, unsized = 0, unknown_count = 0;
  for (std::uint64_t seed = 500; seed < 700; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    for (const auto& f : c.report.findings) (f.diameters_mm.empty() ? unsized : sized)++;
    for (const auto& [organ, known] : c.report.count_known)
      if (!known) ++unknown_count;
  }
  CHECK(sized > 0);
  CHECK(unsized > 0);
  CHECK(unknown_count > 0);
  // Roughly 10% of findings lose their size.
  const double frac = static_cast<double>(unsized) / static_cast<double>(sized + unsized);
  CHECK(frac > 0.04);
  CHECK(frac < 0.20);
}

TEST_CASE("reported slices track the tumor center") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  int close = 0, total = 0;
  for (std::uint64_t seed = 700; seed < 760; ++seed) {
    const PhantomCase c = generate(spec, seed, true);
    REQUIRE(c.report.findings.size() == c.truth.size());
    for (std::size_t i = 0; i < c.truth.size(); ++i) {
      REQUIRE(c.report.findings[i].slice.has_value());
      const int dz = *c.report.findings[i].slice - c.truth[i].center_vox[0];
      total++;
      if (std::abs(dz) <= 3) close++;  // 3 sigma of the 1-voxel wobble
    }
  }
  CHECK(total > 50);
  CHECK(static_cast<double>(close) / total > 0.95);
}

TEST_CASE("ct values respect the clip range and background level") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  const PhantomCase c = generate(spec, 7);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < c.ct.size(); ++i) {
    lo = std::min(lo, c.ct[i]);
    hi = std::max(hi, c.ct[i]);
  }
  CHECK(lo >= spec.clip_hu[0]);
  CHECK(hi <= spec.clip_hu[1]);
  // A corner voxel is background plus noise.
  CHECK(std::abs(c.ct.at(0, 0, 0) - spec.background_hu) < 24.0);
}

TEST_CASE("organ labels are named and inside the volume") {
  const PhantomSpec spec = PhantomSpec::desk_default();
  const PhantomCase c = generate(spec, 8);
  CHECK_NOTHROW(c.organs.validate_codes());
  CHECK(c.organs.names().at(1) == "spleen");
  CHECK(c.organs.names().at(2) == "gallbladder");
  CHECK(mask_for_code(c.organs, 1).count() > 0);
  CHECK(mask_for_code(c.organs, 2).count() > 0);
}

TEST_CASE("the corpus alternates tumor and healthy cases") {
  const std::string dir = testutil::temp_dir("phantom_corpus");
  const PhantomSpec spec = PhantomSpec::desk_default();
  const CorpusManifest m = write_corpus(spec, 4, 2, 9, dir);
  REQUIRE(m.cases.size() == 6);

  int train_tumor = 0, train_healthy = 0;
  for (const auto& cc : m.cases) {
    const StructuredReport r = read_report_file(dir + "/" + cc.report);
    CHECK(r.scan_id == cc.id);
    if (cc.split == "train") (r.findings.empty() ? train_healthy : train_tumor)++;
  }
  CHECK(train_tumor == 2);
  CHECK(train_healthy == 2);

  std::set<std::string> splits;
  for (const auto& cc : m.cases) splits.insert(cc.split);
  CHECK(splits == std::set<std::string>{"train", "test"});
  CHECK(m.cases[0].id == "train_0000");
}

TEST_CASE("corpus generation is deterministic across directories") {
  const std::string d1 = testutil::temp_dir("phantom_det1");
  const std::string d2 = testutil::temp_dir("phantom_det2");
  const PhantomSpec spec = PhantomSpec::desk_default();
  write_corpus(spec, 2, 1, 11, d1);
  write_corpus(spec, 2, 1, 11, d2);
  namespace fs = std::filesystem;
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), d1);
    std::ifstream a(e.path(), std::ios::binary), b(d2 / rel, std::ios::binary);
    REQUIRE(a);
    REQUIRE(b);
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    ++compared;
  }
  CHECK(compared > 6);
}

TEST_CASE("manifests round-trip") {
  const std::string dir = testutil::temp_dir("phantom_manifest");
  CorpusManifest m;
  CorpusCase c;
  c.id = "train_0000";
  c.split = "train";
  c.ct = "train_0000.ct.vol";
  c.organs = "train_0000.organs.vol";
  c.report = "train_0000.report.json";
  c.gt["spleen"] = "train_0000.gt.spleen.vol";
  m.cases.push_back(c);
  write_manifest(dir + "/manifest.json", m);
  const CorpusManifest back = read_manifest(dir + "/manifest.json");
  REQUIRE(back.cases.size() == 1);
  CHECK(back.cases[0].id == c.id);
  CHECK(back.cases[0].split == c.split);
  CHECK(back.cases[0].ct == c.ct);
  CHECK(back.cases[0].gt == c.gt);
  CHECK_THROWS_AS(read_manifest(dir + "/missing.json"), Error);
}
