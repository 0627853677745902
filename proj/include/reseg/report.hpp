#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "reseg/grid.hpp"

namespace reseg {

enum class AttenuationClass { hypo = 0, hyper = 1, mixed_or_iso = 2, unknown = 3 };

std::string attenuation_name(AttenuationClass c);
AttenuationClass attenuation_from_name(const std::string& s);

// One tumor as described by the report. diameters_mm holds 0 to 3 entries and
// is kept sorted descending; empty means size not reported.
struct TumorFinding {
  std::string organ;
  std::optional<std::string> sub_segment;  // must extend the organ name, e.g. "spleen_hilum"
  std::vector<double> diameters_mm;
  std::optional<int> slice;                // index along H
  AttenuationClass attenuation = AttenuationClass::unknown;
};

struct StructuredReport {
  std::string scan_id;
  std::vector<TumorFinding> findings;
  std::vector<std::string> negative_organs;
  // Whether the reported tumor count for an organ is trustworthy. Organs
  // missing from the map default to true.
  std::map<std::string, bool> count_known;

  std::set<std::string> positive_organs() const;
  bool organ_count_known(const std::string& organ) const;
};

StructuredReport parse_report(const std::string& json_text);
StructuredReport read_report_file(const std::string& path);
std::string serialize_report(const StructuredReport& r);
void write_report_file(const std::string& path, const StructuredReport& r);

// Ellipsoid volume from reported diameters. One diameter gives a sphere,
// three give pi/6 * d1*d2*d3, two interpolate the third as their mean.
// Unsized findings give nullopt.
std::optional<double> estimate_volume(const TumorFinding& f);

// Size priors used where reports leave volume or size unspecified: tumors are
// assumed at least 5 mm and at most 120 mm in diameter.
inline constexpr double kMinTumorDiameterMm = 5.0;
inline constexpr double kMaxTumorDiameterMm = 120.0;
double min_tumor_volume_mm3();  // sphere at 5 mm
double max_tumor_volume_mm3();  // sphere at 120 mm

struct ReportedVolume {
  int count = 0;             // number of findings for the organ
  bool count_known = true;
  double volume_mm3 = 0.0;   // sum over findings; meaningful only if volume_known
  bool volume_known = false; // false if any finding for this organ lacks size
};

// Aggregate findings per organ. Only organs with at least one finding appear.
std::map<std::string, ReportedVolume> reported_volume_per_organ(const StructuredReport& r);

}  // namespace reseg
