#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lobemil/evalmetrics.hpp"
#include "lobemil/losses.hpp"
#include "lobemil/model.hpp"
#include "lobemil/phantom.hpp"
#include "lobemil/preprocess.hpp"

namespace lobemil {

struct OptimConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 100;
  double poly_power = 0.75;
  int batch = 1;  // bags per gradient step
  uint64_t seed = 17;
};

struct BagConfig {
  int64_t bag_size = 200;
  int64_t patch_size = 128;
  int eval_draws = 1;
};

enum class TrainMode { kMultiTask, kSegOnly, kClsOnly };
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

// lr0 * (1 - e/E)^power, evaluated at epoch granularity.
double poly_lr(int epoch, const OptimConfig& cfg);

struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

// v <- momentum*v + grad + wd*param; param <- param - lr*v.
// Every selected parameter must carry a gradient buffer.
void sgd_step(ParamStore& params, const std::vector<std::string>& selected,
              SgdState& state, double lr, const OptimConfig& cfg);

// Patient-level five-fold plan. All scans of a patient share a subset; each
// subset serves as the test split exactly once, with the remainder split
// roughly 70/10 into train and validation.
struct FoldSplit {
  std::vector<int> train, val, test;  // case indices into the manifest
};

struct FoldPlan {
  int n_folds = 5;
  std::vector<std::vector<std::string>> subsets;  // patient ids
  std::vector<FoldSplit> splits;
};

FoldPlan make_folds(const Manifest& manifest, int n_folds, uint64_t seed);

// Cases loaded, cropped and windowed once per process.
struct LoadedCase {
  CaseRecord record;
  Volume windowed;
  std::optional<LobeMask> mask;  // cropped alongside the volume
};

std::vector<LoadedCase> load_dataset(const std::string& root,
                                     const Manifest& manifest);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_mil = 0.0, train_seg = 0.0, train_total = 0.0;
  double val_accuracy = 0.0;
  std::optional<double> val_dsc;
};

struct TrainFoldResult {
  std::vector<EpochLog> log;
  std::string checkpoint_path;
};

// Trains one fold and writes checkpoint.bin plus log.jsonl under out_dir.
// Aborts with a diagnostic if the loss turns non-finite.
TrainFoldResult train_fold(const std::vector<LoadedCase>& data,
                           const FoldPlan& plan, int fold, TrainMode mode,
                           const OptimConfig& optim, const LossConfig& loss,
                           const BagConfig& bag_cfg, const ModelConfig& mcfg,
                           const std::string& out_dir);

struct CaseScore {
  std::string case_id;
  double prob_severe = 0.0;
  int label = 0;
};

struct FoldReport {
  int fold = 0;
  ConfusionCounts counts;
  ClassificationMetrics cls;
  std::optional<double> auc_value;
  std::vector<RocPoint> roc;
  MarginStats margins;
  std::optional<double> dsc, sen, ppv;  // mean per-case macro over lobes
  std::vector<CaseScore> scores;
  int64_t masked_cases = 0;
};

// Evaluates a trained model on the fold's test split. Bags are drawn with
// eval-specific seeds; with eval_draws > 1 the severity probabilities are
// averaged over independently drawn bags.
FoldReport eval_fold(const std::vector<LoadedCase>& data,
                     const FoldPlan& plan, int fold, Model& model,
                     const BagConfig& bag_cfg, uint64_t seed);

}  // namespace lobemil
