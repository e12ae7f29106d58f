#pragma once

#include <optional>
#include <string>

#include "lobemil/trainer.hpp"

namespace lobemil {

// Flag set shared by train / eval / sweep. The desk profile is sized so a
// five-fold run plus ablation fits on a laptop CPU; the paper profile keeps
// the published bag size, patch size and epoch budget.
struct RunOptions {
  std::string data_root;
  std::string out_dir;
  std::string profile = "desk";  // desk | paper
  std::string mode = "m2";       // m2 | seg-only | cls-only
  int folds = 5;
  int fold = -1;                 // -1 = run all folds
  OptimConfig optim;
  LossConfig loss;
  BagConfig bag;
  int64_t seg_classes = 6;
  int threads = 0;               // 0 = M2MIL_THREADS or hardware
};

void apply_profile(RunOptions& opt);  // fills bag/epoch defaults per profile

ModelConfig model_config(const RunOptions& opt);

// Serialized into <out>/config.json for reproducibility; eval reads it back.
std::string options_to_json(const RunOptions& opt);
RunOptions options_from_json_file(const std::string& path);
void write_config_snapshot(const RunOptions& opt, const std::string& dir);

void write_fold_plan(const FoldPlan& plan, const std::string& path);
FoldPlan read_fold_plan(const std::string& path);

// Trains one fold in-process. Returns the fold directory.
std::string train_single_fold(const RunOptions& opt, int fold);

// Aggregated evaluation written as report.json / report.csv plus per-fold
// ROC and margin CSVs.
struct EvalSummary {
  std::vector<FoldReport> folds;
  Aggregate accuracy, auc_value, dsc;
};

EvalSummary evaluate_run(const RunOptions& opt, const std::string& train_dir,
                         const std::string& out_dir);

}  // namespace lobemil
