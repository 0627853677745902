#include "reseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace reseg {

namespace {
using nlohmann::json;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

std::string attenuation_name(AttenuationClass c) {
  switch (c) {
    case AttenuationClass::hypo: return "hypo";
    case AttenuationClass::hyper: return "hyper";
    case AttenuationClass::mixed_or_iso: return "mixed_or_iso";
    case AttenuationClass::unknown: return "unknown";
  }
  throw Error("invalid attenuation class");
}

AttenuationClass attenuation_from_name(const std::string& s) {
  if (s == "hypo") return AttenuationClass::hypo;
  if (s == "hyper") return AttenuationClass::hyper;
  if (s == "mixed_or_iso") return AttenuationClass::mixed_or_iso;
  if (s == "unknown") return AttenuationClass::unknown;
  throw Error("unknown attenuation class: " + s);
}

std::set<std::string> StructuredReport::positive_organs() const {
  std::set<std::string> out;
  for (const auto& f : findings) out.insert(f.organ);
  return out;
}

bool StructuredReport::organ_count_known(const std::string& organ) const {
  auto it = count_known.find(organ);
  return it == count_known.end() ? true : it->second;
}

namespace {

void validate_report(const StructuredReport& r) {
  if (r.scan_id.empty()) throw Error("report: scan_id must be non-empty");
  for (const auto& f : r.findings) {
    if (f.organ.empty()) throw Error("report: finding with empty organ");
    if (f.diameters_mm.size() > 3)
      throw Error("report: more than 3 diameters for a finding in organ " + f.organ);
    for (double d : f.diameters_mm)
      if (!(d > 0.0) || !std::isfinite(d))
        throw Error("report: non-positive diameter in organ " + f.organ);
    if (f.slice && *f.slice < 0) throw Error("report: negative slice index in organ " + f.organ);
    if (f.sub_segment) {
      // Sub-segments refine their organ, e.g. "spleen_hilum" under "spleen".
      const std::string prefix = f.organ + "_";
      if (f.sub_segment->rfind(prefix, 0) != 0)
        throw Error("report: sub_segment '" + *f.sub_segment + "' does not refine organ '" +
                    f.organ + "'");
    }
  }
  const auto positives = r.positive_organs();
  for (const auto& neg : r.negative_organs) {
    if (neg.empty()) throw Error("report: empty organ name in negative_organs");
    if (positives.contains(neg))
      throw Error("report: organ '" + neg + "' is both positive and negative");
  }
}

}  // namespace

StructuredReport parse_report(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("report: malformed JSON: ") + e.what());
  }
  StructuredReport r;
  try {
    r.scan_id = j.at("scan_id").get<std::string>();
    for (const auto& fj : j.at("findings")) {
      TumorFinding f;
      f.organ = fj.at("organ").get<std::string>();
      if (fj.contains("sub_segment") && !fj["sub_segment"].is_null())
        f.sub_segment = fj["sub_segment"].get<std::string>();
      if (fj.contains("diameters_mm"))
        f.diameters_mm = fj["diameters_mm"].get<std::vector<double>>();
      if (fj.contains("slice") && !fj["slice"].is_null()) f.slice = fj["slice"].get<int>();
      if (fj.contains("attenuation"))
        f.attenuation = attenuation_from_name(fj["attenuation"].get<std::string>());
      std::sort(f.diameters_mm.begin(), f.diameters_mm.end(), std::greater<>());
      r.findings.push_back(std::move(f));
    }
    if (j.contains("negative_organs"))
      r.negative_organs = j["negative_organs"].get<std::vector<std::string>>();
    if (j.contains("count_known"))
      for (auto it = j["count_known"].begin(); it != j["count_known"].end(); ++it)
        r.count_known[it.key()] = it.value().get<bool>();
  } catch (const json::exception& e) {
    throw Error(std::string("report: missing or mistyped field: ") + e.what());
  }
  validate_report(r);
  return r;
}

StructuredReport read_report_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_report(text);
}

std::string serialize_report(const StructuredReport& r) {
  validate_report(r);
  json j;
  j["scan_id"] = r.scan_id;
  j["findings"] = json::array();
  for (const auto& f : r.findings) {
    json fj;
    fj["organ"] = f.organ;
    fj["sub_segment"] = f.sub_segment ? json(*f.sub_segment) : json(nullptr);
    fj["diameters_mm"] = f.diameters_mm;
    fj["slice"] = f.slice ? json(*f.slice) : json(nullptr);
    fj["attenuation"] = attenuation_name(f.attenuation);
    j["findings"].push_back(fj);
  }
  j["negative_organs"] = r.negative_organs;
  j["count_known"] = json::object();
  for (const auto& [organ, known] : r.count_known) j["count_known"][organ] = known;
  return j.dump(2) + "\n";
}

void write_report_file(const std::string& path, const StructuredReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << serialize_report(r);
}

std::optional<double> estimate_volume(const TumorFinding& f) {
  const auto& d = f.diameters_mm;
  if (d.empty()) return std::nullopt;
  double d1 = d[0], d2, d3;
  if (d.size() == 1) {
    d2 = d3 = d1;
  } else if (d.size() == 2) {
    d2 = d[1];
    d3 = 0.5 * (d1 + d2);
  } else {
    d2 = d[1];
    d3 = d[2];
  }
  return kPi / 6.0 * d1 * d2 * d3;
}

double min_tumor_volume_mm3() {
  return kPi / 6.0 * kMinTumorDiameterMm * kMinTumorDiameterMm * kMinTumorDiameterMm;
}

double max_tumor_volume_mm3() {
  return kPi / 6.0 * kMaxTumorDiameterMm * kMaxTumorDiameterMm * kMaxTumorDiameterMm;
}

std::map<std::string, ReportedVolume> reported_volume_per_organ(const StructuredReport& r) {
  std::map<std::string, ReportedVolume> out;
  for (const auto& f : r.findings) {
    auto& rv = out[f.organ];
    rv.count += 1;
    const auto v = estimate_volume(f);
    if (v) {
      if (rv.count == 1 || rv.volume_known) {
        rv.volume_mm3 += *v;
        rv.volume_known = true;
      }
    } else {
      rv.volume_known = false;
      rv.volume_mm3 = 0.0;
    }
  }
  for (auto& [organ, rv] : out) {
    rv.count_known = r.organ_count_known(organ);
    if (!rv.volume_known) rv.volume_mm3 = 0.0;
  }
  return out;
}

}  // namespace reseg
