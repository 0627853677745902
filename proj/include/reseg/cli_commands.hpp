#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reseg/evalkit.hpp"
#include "reseg/trainer.hpp"

namespace reseg {

// Detection + overlap metrics per organ over the given cases; shared by
// cmd_eval and the end-to-end tests.
std::vector<OrganEvalRow> evaluate_cases(const Corpus& corpus,
                                         const std::map<std::string, Tensor4>& preds,
                                         const std::vector<int>& indices,
                                         const DetectionThresholds& thr, double nsd_tol_mm);

// Subcommand bodies, linked into both the CLI binary and the tests. Each
// writes a small run manifest (config hash + outputs) next to its outputs and
// returns a process exit code.

struct GenOptions {
  std::string config;  // optional JSON config path
  std::string out_dir;
  std::optional<int> cases;  // shorthand: N train cases, no test split
  std::optional<int> n_train, n_test;
  std::optional<std::uint64_t> seed;
};
int cmd_gen(const GenOptions& o);

struct TrainOptions {
  std::string config;
  std::string manifest;
  std::string out_dir;          // checkpoint + metrics.csv
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::string> supervision;  // reports|masks|both
  std::optional<int> mask_count;
  std::optional<int> threads;
};
int cmd_train(const TrainOptions& o);

struct LocalizeOptions {
  std::string prob;     // tumor probability volume (.vol)
  std::string organs;   // organ label volume (.vol)
  std::string report;   // structured report JSON
  std::string out_dir;  // per-organ pseudo-mask volumes + centers JSON
};
int cmd_localize(const LocalizeOptions& o);

struct EvalOptions {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out_csv;
  std::optional<double> confidence;
  std::optional<int> voxel_count;
  std::optional<double> nsd_tolerance_mm;
  std::optional<int> threads;
};
int cmd_eval(const EvalOptions& o);

struct RankOptions {
  std::string manifest;
  std::string checkpoint;  // either a checkpoint...
  std::string pred_dir;    // ...or a directory of stored probability volumes
  std::string split = "train";
  std::string out_csv;
};
int cmd_rank(const RankOptions& o);

struct ExportOptions {
  std::string in_csv;
  std::string out_path;   // .json plot data
  std::vector<std::string> columns;
};
int cmd_export(const ExportOptions& o);

}  // namespace reseg
