#include "reseg/cli_commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reseg/config.hpp"
#include "reseg/csvio.hpp"
#include "reseg/evalkit.hpp"
#include "reseg/trainer.hpp"
#include "reseg/volume_io.hpp"

namespace reseg {

namespace {
using nlohmann::json;
namespace fs = std::filesystem;

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : RunConfig::from_file(path);
}

// Every command leaves a small provenance file next to its outputs: which
// command ran, under which config hash, reading and writing what.
void write_run_manifest(const std::string& dir, const std::string& command,
                        const std::string& config_hash, const json& inputs,
                        const json& outputs) {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  const std::string path = dir + "/run_" + command + ".json";
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

std::map<std::string, Tensor4> infer_all(const Trainer& t, const std::vector<int>& indices) {
  std::map<std::string, Tensor4> preds;
  for (int idx : indices) {
    const CaseData& c = t.corpus().cases[idx];
    preds.emplace(c.id, t.infer(c));
  }
  return preds;
}

}  // namespace

int cmd_gen(const GenOptions& o) {
  RunConfig rc = load_config(o.config);
  if (o.cases) {
    rc.n_train = *o.cases;
    rc.n_test = 0;
  }
  if (o.n_train) rc.n_train = *o.n_train;
  if (o.n_test) rc.n_test = *o.n_test;
  if (o.seed) rc.seed = *o.seed;
  if (o.out_dir.empty()) throw Error("gen: --out is required");
  fs::create_directories(o.out_dir);

  write_corpus(rc.phantom, rc.n_train, rc.n_test, rc.seed, o.out_dir);
  {
    std::ofstream cfg_out(o.out_dir + "/config_resolved.json");
    cfg_out << rc.to_json_text() << '\n';
  }
  write_run_manifest(o.out_dir, "gen", rc.config_hash(),
                     json{{"config", o.config.empty() ? json(nullptr) : json(o.config)}},
                     json{{"manifest", "manifest.json"}});
  std::cout << "gen: wrote " << rc.n_train << " train and " << rc.n_test << " test cases to "
            << o.out_dir << "\n";
  return 0;
}

int cmd_train(const TrainOptions& o) {
  RunConfig rc = load_config(o.config);
  if (o.seed) rc.train.seed = *o.seed;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.supervision) {
    if (*o.supervision == "reports") rc.train.supervision = Supervision::reports_only;
    else if (*o.supervision == "masks") rc.train.supervision = Supervision::masks_only;
    else if (*o.supervision == "both") rc.train.supervision = Supervision::reports_and_masks;
    else throw Error("train: --supervision must be reports, masks or both");
  }
  if (o.mask_count) rc.train.mask_count = *o.mask_count;
  if (o.threads) rc.train.threads = *o.threads;
  if (o.manifest.empty() || o.out_dir.empty()) throw Error("train: --manifest and --out required");
  fs::create_directories(o.out_dir);

  Corpus corpus = Corpus::load(o.manifest);
  Trainer trainer(std::move(corpus), rc.train);
  trainer.train(o.out_dir + "/metrics.csv", o.out_dir + "/loss_diag.csv");
  trainer.save_checkpoint(o.out_dir + "/checkpoint.json", rc.config_hash());
  write_run_manifest(o.out_dir, "train", rc.config_hash(), json{{"manifest", o.manifest}},
                     json{{"checkpoint", "checkpoint.json"},
                          {"metrics", "metrics.csv"},
                          {"loss_diag", "loss_diag.csv"}});
  std::cout << "train: finished " << rc.train.epochs << " epochs; checkpoint at " << o.out_dir
            << "/checkpoint.json\n";
  return 0;
}

int cmd_localize(const LocalizeOptions& o) {
  if (o.prob.empty() || o.organs.empty() || o.report.empty() || o.out_dir.empty())
    throw Error("localize: --prob, --organs, --report and --out required");
  fs::create_directories(o.out_dir);
  const VolumeGrid prob = read_scalar_volume(o.prob);
  const LabelVolume organs = read_label_volume(o.organs);
  require_same_grid(prob.geometry(), organs.geometry(), "localize inputs");
  std::ifstream rin(o.report);
  if (!rin) throw Error("cannot open report: " + o.report);
  std::stringstream rbuf;
  rbuf << rin.rdbuf();
  const StructuredReport report = parse_report(rbuf.str());

  const BallLossConfig bcfg;
  const std::string stem = fs::path(o.prob).stem().string();

  json centers;
  centers["scan_id"] = report.scan_id;
  centers["organs"] = json::object();
  for (const std::string& organ : report.positive_organs()) {
    std::vector<TumorFinding> findings;
    for (const auto& f : report.findings)
      if (f.organ == organ) findings.push_back(f);

    std::int32_t code = -1;
    for (const auto& [cd, name] : organs.names())
      if (name == organ) code = cd;
    if (code < 0) throw Error("localize: organ not in label volume: " + organ);
    const BinaryMask om = mask_for_code(organs, code);

    const auto tumors = localize_tumors(prob, om, findings, bcfg.localize);
    bool any_unsized = false;
    for (const auto& f : findings) any_unsized |= f.diameters_mm.empty();
    const PseudoMask pm =
        make_pseudo_mask(tumors, om, !report.organ_count_known(organ) || any_unsized, bcfg);

    LabelVolume pmv(prob.shape(), prob.spacing(), {{1, "positive"}, {2, "ignore"}});
    for (std::size_t i = 0; i < pm.cls.size(); ++i)
      pmv[i] = pm.cls[i] == PseudoClass::positive ? 1 : (pm.cls[i] == PseudoClass::ignore ? 2 : 0);
    write_volume(o.out_dir + "/" + stem + ".pseudo." + organ + ".vol", pmv);

    json oj = json::array();
    for (const auto& t : tumors) {
      json tj;
      tj["center"] = {t.center[0], t.center[1], t.center[2]};
      tj["diameter_mm"] = t.diameter_mm;
      tj["inflated_mm"] = t.inflated_mm;
      tj["n_target"] = t.target_voxels;
      tj["carved_voxels"] = t.voxels.size();
      tj["size_reported"] = t.size_reported;
      oj.push_back(tj);
    }
    centers["organs"][organ] = oj;
  }
  const std::string centers_path = o.out_dir + "/" + stem + ".centers.json";
  std::ofstream out(centers_path);
  if (!out) throw Error("cannot open for writing: " + centers_path);
  out << centers.dump(2) << '\n';
  write_run_manifest(o.out_dir, "localize", "",
                     json{{"prob", o.prob}, {"organs", o.organs}, {"report", o.report}},
                     json{{"centers", centers_path}});
  std::cout << "localize: wrote pseudo-masks for " << report.scan_id << " to " << o.out_dir
            << "\n";
  return 0;
}

std::vector<OrganEvalRow> evaluate_cases(const Corpus& corpus,
                                         const std::map<std::string, Tensor4>& preds,
                                         const std::vector<int>& indices,
                                         const DetectionThresholds& thr, double nsd_tol_mm) {
  std::vector<OrganEvalRow> rows;
  for (std::size_t ch = 0; ch < corpus.organ_vocab.size(); ++ch) {
    OrganEvalRow row;
    row.organ = corpus.organ_vocab[ch];
    double dsc_sum = 0.0, nsd_sum = 0.0;
    int overlap_n = 0;
    for (int idx : indices) {
      const CaseData& c = corpus.cases[idx];
      std::int32_t code = -1;
      for (const auto& [cd, name] : c.organs.names())
        if (name == row.organ) code = cd;
      if (code < 0) continue;
      const auto pit = preds.find(c.id);
      if (pit == preds.end()) throw Error("eval: missing prediction for case " + c.id);
      const Tensor4& prob = pit->second;
      const BinaryMask om = mask_for_code(c.organs, code);
      VolumeGrid pg(prob.shape, c.ct.spacing());
      std::copy(prob.chan(static_cast<int>(ch)), prob.chan(static_cast<int>(ch)) + prob.plane(),
                pg.data().begin());

      const auto git = c.gt.find(row.organ);
      if (git == c.gt.end())
        throw Error("eval: case " + c.id + " has no ground-truth mask for " + row.organ);
      const bool actual = git->second.count() > 0;
      const bool predicted = detect(pg, om, thr);
      row.counts.add(predicted, actual);

      BinaryMask pred_mask(c.ct.shape(), c.ct.spacing());
      for (std::size_t i = 0; i < pg.size(); ++i)
        pred_mask.set(i, om.test(i) && pg[i] > thr.confidence);
      if (pred_mask.count() > 0 || actual) {
        const OverlapMetrics om2 = dsc_nsd(pred_mask, git->second, nsd_tol_mm);
        dsc_sum += om2.dsc;
        nsd_sum += om2.nsd;
        ++overlap_n;
      }
    }
    row.metrics = detection_metrics(row.counts);
    if (overlap_n > 0) {
      row.dsc_mean = dsc_sum / overlap_n;
      row.nsd_mean = nsd_sum / overlap_n;
    }
    rows.push_back(row);
  }
  return rows;
}

int cmd_eval(const EvalOptions& o) {
  if (o.checkpoint.empty() || o.manifest.empty() || o.out_csv.empty())
    throw Error("eval: --checkpoint, --manifest and --out required");
  Corpus corpus = Corpus::load(o.manifest);
  const Trainer trainer = Trainer::load_checkpoint(o.checkpoint, std::move(corpus));

  DetectionThresholds thr;
  if (o.confidence) thr.confidence = *o.confidence;
  if (o.voxel_count) thr.voxel_count = *o.voxel_count;
  const double nsd_tol = o.nsd_tolerance_mm.value_or(2.0);

  const auto indices = trainer.corpus().split_indices(o.split);
  if (indices.empty()) throw Error("eval: no cases in split " + o.split);
  const auto preds = infer_all(trainer, indices);
  const auto rows = evaluate_cases(trainer.corpus(), preds, indices, thr, nsd_tol);
  write_eval_csv(o.out_csv, rows);

  const std::string dir = fs::path(o.out_csv).parent_path().string();
  if (!dir.empty())
    write_run_manifest(dir, "eval", "", json{{"manifest", o.manifest}, {"checkpoint", o.checkpoint}},
                       json{{"csv", fs::path(o.out_csv).filename().string()}});
  std::cout << "eval: macro F1 over " << o.split << " = " << format_double(macro_f1(rows)) << "\n";
  return 0;
}

int cmd_rank(const RankOptions& o) {
  if (o.manifest.empty() || o.out_csv.empty()) throw Error("rank: --manifest and --out required");
  if (o.checkpoint.empty() == o.pred_dir.empty())
    throw Error("rank: exactly one of --checkpoint or --pred is required");
  Corpus corpus = Corpus::load(o.manifest);

  const auto indices = corpus.split_indices(o.split);
  if (indices.empty()) throw Error("rank: no cases in split " + o.split);

  Corpus sub;
  sub.organ_vocab = corpus.organ_vocab;
  for (int idx : indices) sub.cases.push_back(std::move(corpus.cases[idx]));

  std::map<std::string, Tensor4> preds;
  BallLossConfig bcfg;
  if (!o.checkpoint.empty()) {
    const Trainer trainer = Trainer::load_checkpoint(o.checkpoint, std::move(sub));
    bcfg = trainer.config().ball;
    std::vector<int> all(trainer.corpus().cases.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    preds = infer_all(trainer, all);
    const auto ranked = rank_for_annotation(trainer.corpus(), preds, bcfg);
    CsvWriter csv(o.out_csv, {"rank", "case_id", "score"});
    for (std::size_t i = 0; i < ranked.size(); ++i)
      csv.write_row({static_cast<long long>(i + 1), ranked[i].id, ranked[i].score});
    std::cout << "rank: " << ranked.size() << " cases written to " << o.out_csv << "\n";
    return 0;
  }

  // Stored probability volumes: <pred_dir>/<case>.prob.<organ>.vol per organ.
  for (const auto& c : sub.cases) {
    Tensor4 t(static_cast<int>(sub.organ_vocab.size()), c.ct.shape());
    for (std::size_t ch = 0; ch < sub.organ_vocab.size(); ++ch) {
      const std::string path =
          o.pred_dir + "/" + c.id + ".prob." + sub.organ_vocab[ch] + ".vol";
      const VolumeGrid v = read_scalar_volume(path);
      require_same_grid(v.geometry(), c.ct.geometry(), "rank prediction " + path);
      std::copy(v.data().begin(), v.data().end(), t.chan(static_cast<int>(ch)));
    }
    preds.emplace(c.id, std::move(t));
  }
  const auto ranked = rank_for_annotation(sub, preds, bcfg);
  CsvWriter csv(o.out_csv, {"rank", "case_id", "score"});
  for (std::size_t i = 0; i < ranked.size(); ++i)
    csv.write_row({static_cast<long long>(i + 1), ranked[i].id, ranked[i].score});
  std::cout << "rank: " << ranked.size() << " cases written to " << o.out_csv << "\n";
  return 0;
}

int cmd_export(const ExportOptions& o) {
  if (o.in_csv.empty() || o.out_path.empty()) throw Error("export: --in and --out required");
  const CsvTable t = read_csv(o.in_csv);
  std::vector<int> cols;
  if (o.columns.empty()) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) cols.push_back(static_cast<int>(i));
  } else {
    for (const auto& name : o.columns) {
      const int i = t.column_index(name);
      if (i < 0) throw Error("export: no column named " + name + " in " + o.in_csv);
      cols.push_back(i);
    }
  }
  json j;
  j["columns"] = json::array();
  for (int i : cols) j["columns"].push_back(t.columns[i]);
  j["rows"] = json::array();
  for (const auto& row : t.rows) {
    json r = json::array();
    for (int i : cols) {
      // Numeric cells become numbers so downstream plotting gets real data.
      const std::string& cell = row[i];
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end && *end == '\0' && end != cell.c_str())
        r.push_back(v);
      else
        r.push_back(cell);
    }
    j["rows"].push_back(r);
  }
  std::ofstream out(o.out_path);
  if (!out) throw Error("cannot open for writing: " + o.out_path);
  out << j.dump(2) << '\n';
  std::cout << "export: wrote " << t.rows.size() << " rows to " << o.out_path << "\n";
  return 0;
}

}  // namespace reseg
