// Command-line front end: corpus generation, training, localization, report
// and mask based evaluation, annotation ranking, CSV export.

#include <iostream>

#include <CLI11.hpp>

#include "reseg/cli_commands.hpp"
#include "reseg/grid.hpp"

int main(int argc, char** argv) {
  CLI::App app{"report-supervised tumor segmentation toolkit"};
  app.require_subcommand(1);

  reseg::GenOptions gen;
  auto* cgen = app.add_subcommand("gen", "generate a synthetic corpus");
  cgen->add_option("--config", gen.config, "run config JSON");
  cgen->add_option("--out", gen.out_dir, "output directory")->required();
  int gen_cases = -1, gen_train = -1, gen_test = -1;
  std::uint64_t gen_seed = 0;
  auto* gc = cgen->add_option("--cases", gen_cases, "total cases (train split only)");
  auto* gt = cgen->add_option("--n-train", gen_train, "training cases");
  auto* ge = cgen->add_option("--n-test", gen_test, "test cases");
  auto* gs = cgen->add_option("--seed", gen_seed, "corpus seed");

  reseg::TrainOptions train;
  auto* ctrain = app.add_subcommand("train", "train a model");
  ctrain->add_option("--config", train.config, "run config JSON");
  ctrain->add_option("--manifest", train.manifest, "corpus manifest.json")->required();
  ctrain->add_option("--out", train.out_dir, "output directory")->required();
  std::uint64_t train_seed = 0;
  int train_epochs = -1, train_masks = -1, train_threads = 0;
  double train_lr = 0.0;
  std::string train_sup;
  auto* ts = ctrain->add_option("--seed", train_seed, "training seed");
  auto* te = ctrain->add_option("--epochs", train_epochs, "epoch count");
  auto* tl = ctrain->add_option("--lr", train_lr, "peak learning rate");
  auto* tsup = ctrain->add_option("--supervision", train_sup, "reports|masks|both");
  auto* tm = ctrain->add_option("--mask-count", train_masks, "cases with visible masks");
  auto* tt = ctrain->add_option("--threads", train_threads, "worker threads");

  reseg::LocalizeOptions loc;
  auto* cloc = app.add_subcommand("localize", "emit pseudo-masks for one scan");
  cloc->add_option("--prob", loc.prob, "tumor probability volume (.vol)")->required();
  cloc->add_option("--organs", loc.organs, "organ label volume (.vol)")->required();
  cloc->add_option("--report", loc.report, "structured report JSON")->required();
  cloc->add_option("--out", loc.out_dir, "output directory")->required();

  reseg::EvalOptions ev;
  auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint");
  ceval->add_option("--checkpoint", ev.checkpoint, "checkpoint JSON")->required();
  ceval->add_option("--manifest", ev.manifest, "corpus manifest.json")->required();
  ceval->add_option("--split", ev.split, "split to evaluate (default test)");
  ceval->add_option("--out", ev.out_csv, "output CSV path")->required();
  double ev_conf = -1.0, ev_nsd = -1.0;
  int ev_vox = -1, ev_threads = 0;
  std::string ev_thresholds;
  auto* ec = ceval->add_option("--confidence", ev_conf, "detection confidence threshold");
  auto* evx = ceval->add_option("--voxel-count", ev_vox, "detection voxel count threshold");
  auto* eth = ceval->add_option("--thresholds", ev_thresholds,
                                "detection thresholds as <voxel-count>,<confidence>");
  auto* en = ceval->add_option("--nsd-tolerance", ev_nsd, "NSD tolerance in mm");
  auto* et = ceval->add_option("--threads", ev_threads, "worker threads");

  reseg::RankOptions rank;
  auto* crank = app.add_subcommand("rank", "rank cases for annotation");
  crank->add_option("--manifest", rank.manifest, "corpus manifest.json")->required();
  crank->add_option("--checkpoint", rank.checkpoint, "checkpoint JSON");
  crank->add_option("--pred", rank.pred_dir, "directory with stored probability volumes");
  crank->add_option("--split", rank.split, "split to rank (default train)");
  crank->add_option("--out", rank.out_csv, "output CSV path")->required();

  reseg::ExportOptions ex;
  auto* cexp = app.add_subcommand("export", "CSV to plot-ready JSON");
  cexp->add_option("--in", ex.in_csv, "input CSV")->required();
  cexp->add_option("--out", ex.out_path, "output JSON")->required();
  cexp->add_option("--columns", ex.columns, "columns to keep (default all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cgen) {
      if (*gc) gen.cases = gen_cases;
      if (*gt) gen.n_train = gen_train;
      if (*ge) gen.n_test = gen_test;
      if (*gs) gen.seed = gen_seed;
      return reseg::cmd_gen(gen);
    }
    if (*ctrain) {
      if (*ts) train.seed = train_seed;
      if (*te) train.epochs = train_epochs;
      if (*tl) train.lr = train_lr;
      if (*tsup) train.supervision = train_sup;
      if (*tm) train.mask_count = train_masks;
      if (*tt) train.threads = train_threads;
      return reseg::cmd_train(train);
    }
    if (*cloc) return reseg::cmd_localize(loc);
    if (*ceval) {
      if (*ec) ev.confidence = ev_conf;
      if (*evx) ev.voxel_count = ev_vox;
      if (*eth) {
        const auto comma = ev_thresholds.find(',');
        if (comma == std::string::npos)
          throw reseg::Error("--thresholds expects <voxel-count>,<confidence>");
        ev.voxel_count = std::stoi(ev_thresholds.substr(0, comma));
        ev.confidence = std::stod(ev_thresholds.substr(comma + 1));
      }
      if (*en) ev.nsd_tolerance_mm = ev_nsd;
      if (*et) ev.threads = ev_threads;
      return reseg::cmd_eval(ev);
    }
    if (*crank) return reseg::cmd_rank(rank);
    if (*cexp) return reseg::cmd_export(ex);
  } catch (const reseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
