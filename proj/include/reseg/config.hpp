#pragma once

#include <cstdint>
#include <string>

#include "reseg/phantom.hpp"
#include "reseg/trainer.hpp"

namespace reseg {

std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

// Everything a run needs, loadable from one JSON file. Unknown keys anywhere
// in the document are rejected so typos fail loudly instead of silently
// falling back to defaults.
struct RunConfig {
  PhantomSpec phantom = PhantomSpec::desk_default();
  int n_train = 64;
  int n_test = 32;
  TrainConfig train;
  DetectionThresholds detection;
  double nsd_tolerance_mm = 2.0;
  std::uint64_t seed = 0;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;  // canonical (sorted keys), hash input
  std::string config_hash() const;   // fnv1a64 of the canonical text, hex
};

// Train-section (de)serialization reused by checkpoints.
std::string train_config_to_json_text(const TrainConfig& t);
TrainConfig train_config_from_json_text(const std::string& text);

}  // namespace reseg
