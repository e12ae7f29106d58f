// Command-line front end: dataset generation, training, evaluation,
// gradient checking, hyperparameter sweeps and report emission.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lobemil/gradsuite.hpp"
#include "lobemil/pipeline.hpp"
#include "lobemil/runtime.hpp"
#include "lobemil/subprocess.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lobemil;

namespace {

// Exit codes: 0 success, 1 failed action, 2 usage, 3 dataset problem,
// 4 checkpoint problem, 5 invalid configuration.
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDataset = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitConfig = 5;

struct GenFlags {
  std::string root;
  int cases = 120;
  int patients = 40;
  uint64_t seed = 7;
  double mask_frac = 0.15;
  double severe_prob = 0.2;
  double tau = 0.15;
  bool force = false;
};

int cmd_gen(const GenFlags& flags) {
  if (flags.cases < 1) {
    std::cerr << "gen: --cases must be at least 1\n";
    return kExitUsage;
  }
  fs::path root(flags.root);
  if (fs::exists(root) && !fs::is_empty(root) && !flags.force) {
    std::cerr << "gen: " << flags.root
              << " exists and is not empty (pass --force to overwrite)\n";
    return kExitDataset;
  }
  DatasetGenOptions opt;
  opt.n_cases = flags.cases;
  opt.n_patients = flags.patients;
  opt.mask_fraction = flags.mask_frac;
  opt.seed = flags.seed;
  opt.phantom.severe_prob = flags.severe_prob;
  opt.phantom.tau = flags.tau;
  Manifest m = generate_dataset(flags.root, opt);
  int severe = 0, masked = 0;
  for (const CaseRecord& c : m.cases) {
    severe += c.severe ? 1 : 0;
    masked += c.mask_file ? 1 : 0;
  }
  std::printf("generated %zu cases under %s\n", m.cases.size(),
              flags.root.c_str());
  std::printf("  severe: %d (%.1f%%), with masks: %d\n", severe,
              100.0 * severe / double(m.cases.size()), masked);
  return 0;
}

// Profile fills bag size, patch size and epochs; flags the user passed
// explicitly win over the profile values.
void resolve_profile(CLI::App* cmd, RunOptions& opt) {
  RunOptions defaults = opt;
  apply_profile(defaults);
  if (cmd->count("--epochs") == 0) opt.optim.epochs = defaults.optim.epochs;
  if (cmd->count("--bag-size") == 0)
    opt.bag.bag_size = defaults.bag.bag_size;
  if (cmd->count("--patch-size") == 0)
    opt.bag.patch_size = defaults.bag.patch_size;
}

// Recreates the flags a child fold-worker needs. Every resolved option is
// passed explicitly so children never depend on profile defaults.
Command fold_command(const RunOptions& opt, int fold) {
  char num[32];
  auto fmt = [&num](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    return std::string(num);
  };
  Command cmd;
  cmd.argv = {self_exe_path(),
              "train",
              "--data", opt.data_root,
              "--out", opt.out_dir,
              "--profile", opt.profile,
              "--mode", opt.mode,
              "--folds", std::to_string(opt.folds),
              "--fold", std::to_string(fold),
              "--epochs", std::to_string(opt.optim.epochs),
              "--bag-size", std::to_string(opt.bag.bag_size),
              "--patch-size", std::to_string(opt.bag.patch_size),
              "--lambda", fmt(opt.loss.lambda),
              "--lr", fmt(opt.optim.lr0),
              "--momentum", fmt(opt.optim.momentum),
              "--weight-decay", fmt(opt.optim.weight_decay),
              "--batch", std::to_string(opt.optim.batch),
              "--seed", std::to_string(opt.optim.seed),
              "--seg-classes", std::to_string(opt.seg_classes)};
  return cmd;
}

int cmd_train(const RunOptions& opt) {
  if (!fs::exists(fs::path(opt.data_root) / "manifest.json")) {
    std::cerr << "train: no dataset manifest under " << opt.data_root << "\n";
    return kExitDataset;
  }
  Manifest manifest = read_manifest(opt.data_root);

  if (opt.fold >= 0) {
    // Worker mode: the fold plan is expected in place.
    train_single_fold(opt, opt.fold);
    return 0;
  }

  fs::create_directories(opt.out_dir);
  write_config_snapshot(opt, opt.out_dir);
  FoldPlan plan = make_folds(manifest, opt.folds, opt.optim.seed);
  write_fold_plan(plan, (fs::path(opt.out_dir) / "folds.json").string());

  int workers = opt.threads > 0 ? opt.threads : worker_threads();
  workers = std::min(workers, opt.folds);
  if (workers <= 1) {
    for (int f = 0; f < opt.folds; ++f) {
      train_single_fold(opt, f);
      std::printf("fold %d trained\n", f);
    }
  } else {
    std::vector<Command> cmds;
    for (int f = 0; f < opt.folds; ++f) cmds.push_back(fold_command(opt, f));
    std::vector<int> status = run_commands(cmds, workers);
    for (int f = 0; f < opt.folds; ++f) {
      if (status[size_t(f)] != 0) {
        std::cerr << "train: fold " << f << " worker failed with status "
                  << status[size_t(f)] << "\n";
        return kExitFailure;
      }
      std::printf("fold %d trained\n", f);
    }
  }
  std::printf("training complete: %s\n", opt.out_dir.c_str());
  return 0;
}

int cmd_eval(const RunOptions& opt, const std::string& train_dir,
             const std::string& out_dir) {
  if (!fs::exists(fs::path(opt.data_root) / "manifest.json")) {
    std::cerr << "eval: no dataset manifest under " << opt.data_root << "\n";
    return kExitDataset;
  }
  if (!fs::exists(fs::path(train_dir) / "config.json") ||
      !fs::exists(fs::path(train_dir) / "folds.json")) {
    std::cerr << "eval: " << train_dir
              << " does not look like a training output directory\n";
    return kExitCheckpoint;
  }
  EvalSummary summary;
  try {
    summary = evaluate_run(opt, train_dir, out_dir);
  } catch (const std::runtime_error& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return kExitCheckpoint;
  }
  std::printf("accuracy %.4f +/- %.4f | auc %.4f | dsc %.4f (folds: %d)\n",
              summary.accuracy.mean, summary.accuracy.stddev,
              summary.auc_value.mean, summary.dsc.mean,
              int(summary.folds.size()));
  std::printf("report: %s/report.json\n", out_dir.c_str());
  return 0;
}

int cmd_gradcheck(int points, double eps, double tol, uint64_t seed) {
  std::vector<GradSuiteRow> rows = run_grad_suite(points, eps, tol, seed);
  bool all_pass = true;
  std::printf("%-22s %8s %14s %6s\n", "op", "points", "max_rel_err", "pass");
  for (const GradSuiteRow& r : rows) {
    std::printf("%-22s %8d %14.3e %6s\n", r.name.c_str(), r.points,
                r.max_rel_err, r.pass ? "yes" : "NO");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : kExitFailure;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

// Runs one sweep cell in-process: sequential fold training plus eval.
int cmd_sweep_cell(const RunOptions& opt) {
  Manifest manifest = read_manifest(opt.data_root);
  fs::create_directories(opt.out_dir);
  write_config_snapshot(opt, opt.out_dir);
  FoldPlan plan = make_folds(manifest, opt.folds, opt.optim.seed);
  write_fold_plan(plan, (fs::path(opt.out_dir) / "folds.json").string());
  for (int f = 0; f < opt.folds; ++f) train_single_fold(opt, f);
  evaluate_run(opt, opt.out_dir, (fs::path(opt.out_dir) / "eval").string());
  return 0;
}

int cmd_sweep(const RunOptions& base, const std::string& lambda_grid,
              const std::string& lr_grid) {
  std::vector<double> lambdas = parse_grid(lambda_grid);
  std::vector<double> lrs = parse_grid(lr_grid);
  if (lambdas.empty()) lambdas.push_back(base.loss.lambda);
  if (lrs.empty()) lrs.push_back(base.optim.lr0);

  if (!fs::exists(fs::path(base.data_root) / "manifest.json")) {
    std::cerr << "sweep: no dataset manifest under " << base.data_root
              << "\n";
    return kExitDataset;
  }
  fs::create_directories(base.out_dir);
  write_config_snapshot(base, base.out_dir);

  char num[32];
  auto fmt = [&num](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    return std::string(num);
  };
  std::vector<Command> cmds;
  std::vector<std::string> cell_dirs;
  for (double lam : lambdas)
    for (double lr : lrs) {
      char name[64];
      std::snprintf(name, sizeof(name), "cell_lam%g_lr%g", lam, lr);
      std::string cell_dir = (fs::path(base.out_dir) / name).string();
      cell_dirs.push_back(cell_dir);
      Command cmd;
      cmd.argv = {self_exe_path(),
                  "sweep-cell",
                  "--data", base.data_root,
                  "--out", cell_dir,
                  "--profile", base.profile,
                  "--mode", base.mode,
                  "--folds", std::to_string(base.folds),
                  "--epochs", std::to_string(base.optim.epochs),
                  "--bag-size", std::to_string(base.bag.bag_size),
                  "--patch-size", std::to_string(base.bag.patch_size),
                  "--lambda", fmt(lam),
                  "--lr", fmt(lr),
                  "--momentum", fmt(base.optim.momentum),
                  "--weight-decay", fmt(base.optim.weight_decay),
                  "--batch", std::to_string(base.optim.batch),
                  "--seed", std::to_string(base.optim.seed),
                  "--seg-classes", std::to_string(base.seg_classes)};
      cmds.push_back(cmd);
    }
  int workers = base.threads > 0 ? base.threads : worker_threads();
  std::vector<int> status = run_commands(cmds, workers);
  bool ok = true;
  for (size_t i = 0; i < status.size(); ++i)
    if (status[i] != 0) {
      std::cerr << "sweep: cell " << cell_dirs[i] << " failed with status "
                << status[i] << "\n";
      ok = false;
    }
  if (!ok) return kExitFailure;

  std::ofstream grid(fs::path(base.out_dir) / "grid.csv",
                     std::ios::binary | std::ios::trunc);
  grid << "lambda,lr,accuracy,accuracy_std,auc,dsc\n";
  size_t idx = 0;
  for (double lam : lambdas)
    for (double lr : lrs) {
      std::ifstream in(fs::path(cell_dirs[idx]) / "eval" / "report.json");
      if (in) {
        json r = json::parse(in);
        grid << lam << "," << lr << ","
             << r["aggregate"]["accuracy"]["mean"].get<double>() << ","
             << r["aggregate"]["accuracy"]["std"].get<double>() << ","
             << r["aggregate"]["auc"]["mean"].get<double>() << ","
             << r["aggregate"]["dsc"]["mean"].get<double>() << "\n";
      }
      ++idx;
    }
  std::printf("sweep complete: %zu cells under %s\n", cell_dirs.size(),
              base.out_dir.c_str());
  return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_path) {
  std::vector<fs::path> reports;
  if (fs::exists(fs::path(in_dir) / "report.json"))
    reports.push_back(fs::path(in_dir) / "report.json");
  else if (fs::exists(in_dir))
    for (const auto& entry : fs::directory_iterator(in_dir))
      if (entry.is_directory() &&
          fs::exists(entry.path() / "eval" / "report.json"))
        reports.push_back(entry.path() / "eval" / "report.json");
  if (reports.empty()) {
    std::cerr << "report: no report.json found under " << in_dir << "\n";
    return kExitDataset;
  }
  std::sort(reports.begin(), reports.end());
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  out << "source,fold,accuracy,auc,dsc\n";
  for (const fs::path& p : reports) {
    std::ifstream in(p);
    json r = json::parse(in);
    for (const json& fr : r["folds"]) {
      out << p.parent_path().string() << "," << fr["fold"].get<int>() << ","
          << fr["accuracy"].get<double>() << ","
          << (fr["auc"].is_null() ? ""
                                  : std::to_string(fr["auc"].get<double>()))
          << ","
          << (fr["dsc"].is_null() ? ""
                                  : std::to_string(fr["dsc"].get<double>()))
          << "\n";
    }
  }
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

void add_run_flags(CLI::App* cmd, RunOptions& opt) {
  cmd->add_option("--data", opt.data_root, "dataset root")->required();
  cmd->add_option("--profile", opt.profile, "desk | paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--mode", opt.mode, "m2 | seg-only | cls-only")
      ->check(CLI::IsMember({"m2", "seg-only", "cls-only"}));
  cmd->add_option("--folds", opt.folds, "number of CV folds");
  cmd->add_option("--epochs", opt.optim.epochs, "training epochs");
  cmd->add_option("--bag-size", opt.bag.bag_size, "patches per bag");
  cmd->add_option("--patch-size", opt.bag.patch_size, "patch side length");
  cmd->add_option("--lambda", opt.loss.lambda, "MIL loss weight");
  cmd->add_option("--lr", opt.optim.lr0, "initial learning rate");
  cmd->add_option("--momentum", opt.optim.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", opt.optim.weight_decay, "weight decay");
  cmd->add_option("--batch", opt.optim.batch, "bags per gradient step");
  cmd->add_option("--seed", opt.optim.seed, "run seed");
  cmd->add_option("--seg-classes", opt.seg_classes,
                  "segmentation classes (5 lobes + background)");
  cmd->add_option("--threads", opt.threads,
                  "worker processes (default: M2MIL_THREADS or cores)");
}

}  // namespace

int main(int argc, char** argv) {
  init_runtime(argc, argv);
  CLI::App app{"multi-task lobe segmentation + MIL severity assessment"};
  app.require_subcommand(1);

  GenFlags gen;
  CLI::App* c_gen = app.add_subcommand("gen", "generate a phantom dataset");
  c_gen->add_option("--root", gen.root, "output dataset root")->required();
  c_gen->add_option("--cases", gen.cases, "number of cases");
  c_gen->add_option("--patients", gen.patients, "number of patients");
  c_gen->add_option("--seed", gen.seed, "generator seed");
  c_gen->add_option("--mask-frac", gen.mask_frac,
                    "fraction of cases with lobe masks");
  c_gen->add_option("--severe-prob", gen.severe_prob,
                    "target severe fraction");
  c_gen->add_option("--tau", gen.tau, "severity threshold on lung fraction");
  c_gen->add_flag("--force", gen.force, "overwrite a non-empty root");

  RunOptions train_opt;
  CLI::App* c_train =
      app.add_subcommand("train", "train cross-validation folds");
  add_run_flags(c_train, train_opt);
  c_train->add_option("--out", train_opt.out_dir, "output directory")
      ->required();
  c_train->add_option("--fold", train_opt.fold,
                      "train a single fold (worker mode)");

  RunOptions eval_opt;
  std::string eval_train_dir, eval_out_dir;
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate trained folds");
  c_eval->add_option("--data", eval_opt.data_root, "dataset root")
      ->required();
  c_eval->add_option("--train-dir", eval_train_dir,
                     "training output directory")
      ->required();
  c_eval->add_option("--out", eval_out_dir, "report directory")->required();
  c_eval->add_option("--eval-draws", eval_opt.bag.eval_draws,
                     "random baggings averaged per case");
  c_eval->add_option("--fold", eval_opt.fold, "evaluate a single fold");

  int gc_points = 20;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  uint64_t gc_seed = 17;
  CLI::App* c_gc =
      app.add_subcommand("gradcheck", "finite-difference gradient checks");
  c_gc->add_option("--points", gc_points, "random points per op");
  c_gc->add_option("--eps", gc_eps, "finite-difference step");
  c_gc->add_option("--tol", gc_tol, "max relative error");
  c_gc->add_option("--seed", gc_seed, "probe seed");

  RunOptions sweep_opt;
  std::string lambda_grid, lr_grid;
  CLI::App* c_sweep =
      app.add_subcommand("sweep", "grid over lambda and learning rate");
  add_run_flags(c_sweep, sweep_opt);
  c_sweep->add_option("--out", sweep_opt.out_dir, "output directory")
      ->required();
  c_sweep->add_option("--lambda-grid", lambda_grid,
                      "comma-separated lambda values");
  c_sweep->add_option("--lr-grid", lr_grid, "comma-separated learning rates");

  RunOptions cell_opt;
  CLI::App* c_cell = app.add_subcommand("sweep-cell", "");
  add_run_flags(c_cell, cell_opt);
  c_cell->add_option("--out", cell_opt.out_dir)->required();

  std::string report_in, report_out = "summary.csv";
  CLI::App* c_report =
      app.add_subcommand("report", "aggregate fold reports into CSV");
  c_report->add_option("--in", report_in, "eval or sweep directory")
      ->required();
  c_report->add_option("--out", report_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_gen) return cmd_gen(gen);
    if (*c_train) {
      resolve_profile(c_train, train_opt);
      return cmd_train(train_opt);
    }
    if (*c_eval) return cmd_eval(eval_opt, eval_train_dir, eval_out_dir);
    if (*c_gc) return cmd_gradcheck(gc_points, gc_eps, gc_tol, gc_seed);
    if (*c_sweep) {
      resolve_profile(c_sweep, sweep_opt);
      return cmd_sweep(sweep_opt, lambda_grid, lr_grid);
    }
    if (*c_cell) {
      resolve_profile(c_cell, cell_opt);
      return cmd_sweep_cell(cell_opt);
    }
    if (*c_report) return cmd_report(report_in, report_out);
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitDataset;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
