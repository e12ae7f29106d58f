#include "lobemil/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lobemil {

namespace fs = std::filesystem;
using json = nlohmann::json;

void apply_profile(RunOptions& opt) {
  if (opt.profile == "paper") {
    opt.bag.bag_size = 200;
    opt.bag.patch_size = 128;
    opt.optim.epochs = 100;
  } else if (opt.profile == "desk") {
    opt.bag.bag_size = 32;
    opt.bag.patch_size = 16;
    opt.optim.epochs = 20;
  } else {
    throw std::invalid_argument("unknown profile: " + opt.profile);
  }
}

ModelConfig model_config(const RunOptions& opt) {
  ModelConfig cfg;
  cfg.backbone.seg_classes = opt.seg_classes;
  return cfg;
}

std::string options_to_json(const RunOptions& opt) {
  json j = {
      {"data_root", opt.data_root},
      {"out_dir", opt.out_dir},
      {"profile", opt.profile},
      {"mode", opt.mode},
      {"folds", opt.folds},
      {"fold", opt.fold},
      {"lr0", opt.optim.lr0},
      {"momentum", opt.optim.momentum},
      {"weight_decay", opt.optim.weight_decay},
      {"epochs", opt.optim.epochs},
      {"poly_power", opt.optim.poly_power},
      {"batch", opt.optim.batch},
      {"seed", opt.optim.seed},
      {"lambda", opt.loss.lambda},
      {"dice_eps", opt.loss.dice_eps},
      {"bag_size", opt.bag.bag_size},
      {"patch_size", opt.bag.patch_size},
      {"eval_draws", opt.bag.eval_draws},
      {"seg_classes", opt.seg_classes},
  };
  return j.dump(2);
}

RunOptions options_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j = json::parse(in);
  RunOptions opt;
  opt.data_root = j.at("data_root").get<std::string>();
  opt.out_dir = j.at("out_dir").get<std::string>();
  opt.profile = j.at("profile").get<std::string>();
  opt.mode = j.at("mode").get<std::string>();
  opt.folds = j.at("folds").get<int>();
  opt.fold = j.at("fold").get<int>();
  opt.optim.lr0 = j.at("lr0").get<double>();
  opt.optim.momentum = j.at("momentum").get<double>();
  opt.optim.weight_decay = j.at("weight_decay").get<double>();
  opt.optim.epochs = j.at("epochs").get<int>();
  opt.optim.poly_power = j.at("poly_power").get<double>();
  opt.optim.batch = j.at("batch").get<int>();
  opt.optim.seed = j.at("seed").get<uint64_t>();
  opt.loss.lambda = j.at("lambda").get<double>();
  opt.loss.dice_eps = j.at("dice_eps").get<double>();
  opt.bag.bag_size = j.at("bag_size").get<int64_t>();
  opt.bag.patch_size = j.at("patch_size").get<int64_t>();
  opt.bag.eval_draws = j.at("eval_draws").get<int>();
  opt.seg_classes = j.at("seg_classes").get<int64_t>();
  return opt;
}

void write_config_snapshot(const RunOptions& opt, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.json",
                    std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config under " + dir);
  out << options_to_json(opt) << "\n";
}

void write_fold_plan(const FoldPlan& plan, const std::string& path) {
  json subsets = json::array();
  for (const auto& s : plan.subsets) subsets.push_back(s);
  json splits = json::array();
  for (const FoldSplit& s : plan.splits)
    splits.push_back(
        {{"train", s.train}, {"val", s.val}, {"test", s.test}});
  json j = {{"n_folds", plan.n_folds},
            {"subsets", subsets},
            {"splits", splits}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write fold plan " + path);
  out << j.dump(2) << "\n";
}

FoldPlan read_fold_plan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open fold plan " + path);
  json j = json::parse(in);
  FoldPlan plan;
  plan.n_folds = j.at("n_folds").get<int>();
  for (const json& s : j.at("subsets"))
    plan.subsets.push_back(s.get<std::vector<std::string>>());
  for (const json& s : j.at("splits")) {
    FoldSplit split;
    split.train = s.at("train").get<std::vector<int>>();
    split.val = s.at("val").get<std::vector<int>>();
    split.test = s.at("test").get<std::vector<int>>();
    plan.splits.push_back(std::move(split));
  }
  return plan;
}

std::string train_single_fold(const RunOptions& opt, int fold) {
  Manifest manifest = read_manifest(opt.data_root);
  FoldPlan plan = read_fold_plan(
      (fs::path(opt.out_dir) / "folds.json").string());
  std::vector<LoadedCase> data = load_dataset(opt.data_root, manifest);
  std::string fold_dir =
      (fs::path(opt.out_dir) / ("fold_" + std::to_string(fold))).string();
  train_fold(data, plan, fold, train_mode_from_string(opt.mode), opt.optim,
             opt.loss, opt.bag, model_config(opt), fold_dir);
  return fold_dir;
}

namespace {

json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

json report_to_json(const FoldReport& r) {
  json scores = json::array();
  for (const CaseScore& s : r.scores)
    scores.push_back(
        {{"case", s.case_id}, {"prob", s.prob_severe}, {"label", s.label}});
  return json{
      {"fold", r.fold},
      {"counts",
       {{"tp", r.counts.tp},
        {"tn", r.counts.tn},
        {"fp", r.counts.fp},
        {"fn", r.counts.fn}}},
      {"accuracy", r.cls.accuracy},
      {"precision", optional_to_json(r.cls.precision)},
      {"recall", optional_to_json(r.cls.recall)},
      {"f1", optional_to_json(r.cls.f1)},
      {"auc", optional_to_json(r.auc_value)},
      {"dsc", optional_to_json(r.dsc)},
      {"sen", optional_to_json(r.sen)},
      {"ppv", optional_to_json(r.ppv)},
      {"masked_cases", r.masked_cases},
      {"margin_correct", r.margins.correct},
      {"scores", scores},
  };
}

void write_roc_csv(const FoldReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "fpr,tpr\n";
  for (const RocPoint& p : r.roc) out << p.fpr << "," << p.tpr << "\n";
}

void write_margins_csv(const FoldReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "case,prob,label,margin\n";
  for (size_t i = 0; i < r.scores.size(); ++i)
    out << r.scores[i].case_id << "," << r.scores[i].prob_severe << ","
        << r.scores[i].label << "," << r.margins.margins[i] << "\n";
}

}  // namespace

EvalSummary evaluate_run(const RunOptions& opt, const std::string& train_dir,
                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  RunOptions train_opt = options_from_json_file(
      (fs::path(train_dir) / "config.json").string());
  FoldPlan plan =
      read_fold_plan((fs::path(train_dir) / "folds.json").string());
  Manifest manifest = read_manifest(opt.data_root);
  std::vector<LoadedCase> data = load_dataset(opt.data_root, manifest);

  BagConfig bag = train_opt.bag;
  bag.eval_draws = opt.bag.eval_draws;

  EvalSummary summary;
  std::vector<std::optional<double>> accs, aucs, dscs;
  json fold_reports = json::array();
  std::vector<int> folds_to_eval;
  if (opt.fold >= 0)
    folds_to_eval.push_back(opt.fold);
  else
    for (int f = 0; f < plan.n_folds; ++f) folds_to_eval.push_back(f);

  for (int f : folds_to_eval) {
    fs::path ckpt =
        fs::path(train_dir) / ("fold_" + std::to_string(f)) / "checkpoint.bin";
    if (!fs::exists(ckpt))
      throw std::runtime_error("missing checkpoint " + ckpt.string());
    Model model = Model::init(model_config(train_opt), 0);
    model.load_checkpoint_file(ckpt.string());
    FoldReport r =
        eval_fold(data, plan, f, model, bag, train_opt.optim.seed);

    // Margin-derived correctness must agree with the confusion counts.
    if (r.margins.correct != r.counts.tp + r.counts.tn)
      throw std::runtime_error(
          "margin correctness disagrees with confusion accuracy in fold " +
          std::to_string(f));

    accs.push_back(r.cls.accuracy);
    aucs.push_back(r.auc_value);
    dscs.push_back(r.dsc);
    fold_reports.push_back(report_to_json(r));
    write_roc_csv(r, (fs::path(out_dir) /
                      ("roc_fold_" + std::to_string(f) + ".csv"))
                         .string());
    write_margins_csv(r, (fs::path(out_dir) /
                          ("margins_fold_" + std::to_string(f) + ".csv"))
                             .string());
    summary.folds.push_back(std::move(r));
  }

  summary.accuracy = aggregate_values(accs);
  summary.auc_value = aggregate_values(aucs);
  summary.dsc = aggregate_values(dscs);

  json doc = {
      {"folds", fold_reports},
      {"aggregate",
       {{"accuracy",
         {{"mean", summary.accuracy.mean},
          {"std", summary.accuracy.stddev},
          {"n", summary.accuracy.n}}},
        {"auc",
         {{"mean", summary.auc_value.mean},
          {"std", summary.auc_value.stddev},
          {"n", summary.auc_value.n}}},
        {"dsc",
         {{"mean", summary.dsc.mean},
          {"std", summary.dsc.stddev},
          {"n", summary.dsc.n}}}}},
  };
  std::ofstream out(fs::path(out_dir) / "report.json",
                    std::ios::binary | std::ios::trunc);
  out << doc.dump(2) << "\n";

  std::ofstream csv(fs::path(out_dir) / "report.csv",
                    std::ios::binary | std::ios::trunc);
  csv << "fold,accuracy,precision,recall,f1,auc,dsc,sen,ppv\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  for (const FoldReport& r : summary.folds)
    csv << r.fold << "," << r.cls.accuracy << "," << cell(r.cls.precision)
        << "," << cell(r.cls.recall) << "," << cell(r.cls.f1) << ","
        << cell(r.auc_value) << "," << cell(r.dsc) << "," << cell(r.sen)
        << "," << cell(r.ppv) << "\n";
  csv << "mean," << summary.accuracy.mean << ",,,," << summary.auc_value.mean
      << "," << summary.dsc.mean << ",,\n";
  return summary;
}

}  // namespace lobemil
