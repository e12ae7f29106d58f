#include "lobemil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace lobemil {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kMultiTask: return "m2";
    case TrainMode::kSegOnly: return "seg-only";
    case TrainMode::kClsOnly: return "cls-only";
  }
  return "m2";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "m2") return TrainMode::kMultiTask;
  if (s == "seg-only") return TrainMode::kSegOnly;
  if (s == "cls-only") return TrainMode::kClsOnly;
  throw std::invalid_argument("unknown training mode: " + s);
}

double poly_lr(int epoch, const OptimConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs)
    throw std::invalid_argument("poly_lr: epoch outside [0, E]");
  return cfg.lr0 *
         std::pow(1.0 - double(epoch) / double(cfg.epochs), cfg.poly_power);
}

void sgd_step(ParamStore& params, const std::vector<std::string>& selected,
              SgdState& state, double lr, const OptimConfig& cfg) {
  for (const std::string& name : selected) {
    Tensor& p = params.at(name);
    if (!p.has_grad())
      throw std::runtime_error("sgd_step: parameter " + name +
                               " has no gradient");
    const auto& g = p.grad();
    auto [it, inserted] =
        state.velocity.try_emplace(name, p.data().size(), 0.0);
    auto& v = it->second;
    auto& d = p.data();
    for (size_t i = 0; i < d.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * d[i];
      d[i] -= lr * v[i];
    }
  }
}

FoldPlan make_folds(const Manifest& manifest, int n_folds, uint64_t seed) {
  std::set<std::string> patient_set;
  for (const CaseRecord& c : manifest.cases) patient_set.insert(c.patient_id);
  std::vector<std::string> patients(patient_set.begin(), patient_set.end());
  if (int(patients.size()) < n_folds)
    throw std::invalid_argument(
        "make_folds: need at least " + std::to_string(n_folds) +
        " patients, have " + std::to_string(patients.size()));

  Rng rng(derive_seed({seed, 0x666f6c64ULL}));
  rng.shuffle(patients);

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.subsets.assign(size_t(n_folds), {});
  for (size_t i = 0; i < patients.size(); ++i)
    plan.subsets[i % size_t(n_folds)].push_back(patients[i]);

  int val_patients =
      std::max<int>(1, int(std::llround(0.10 * double(patients.size()))));

  for (int f = 0; f < n_folds; ++f) {
    std::set<std::string> test_set(plan.subsets[size_t(f)].begin(),
                                   plan.subsets[size_t(f)].end());
    std::vector<std::string> rest;
    for (int off = 1; off < n_folds; ++off)
      for (const std::string& p :
           plan.subsets[size_t((f + off) % n_folds)])
        rest.push_back(p);
    std::set<std::string> val_set(rest.begin(),
                                  rest.begin() +
                                      std::min<size_t>(size_t(val_patients),
                                                       rest.size()));
    FoldSplit split;
    for (int i = 0; i < int(manifest.cases.size()); ++i) {
      const std::string& pid = manifest.cases[size_t(i)].patient_id;
      if (test_set.count(pid))
        split.test.push_back(i);
      else if (val_set.count(pid))
        split.val.push_back(i);
      else
        split.train.push_back(i);
    }
    plan.splits.push_back(std::move(split));
  }
  return plan;
}

std::vector<LoadedCase> load_dataset(const std::string& root,
                                     const Manifest& manifest) {
  std::vector<LoadedCase> out;
  out.reserve(manifest.cases.size());
  for (const CaseRecord& rec : manifest.cases) {
    LoadedCase lc;
    lc.record = rec;
    Volume raw = read_volume((fs::path(root) / rec.volume_file).string());
    auto [cropped, box] = body_crop(raw);
    lc.windowed = window_and_normalize(cropped);
    if (rec.mask_file) {
      LobeMask mask =
          read_mask((fs::path(root) / *rec.mask_file).string());
      if (mask.extents != raw.extents)
        throw DatasetError(DatasetErrorKind::kExtentMismatch,
                           "mask extents differ from volume for " + rec.id);
      lc.mask = crop_mask(mask, box);
    }
    out.push_back(std::move(lc));
  }
  return out;
}

namespace {

Bag draw_bag(const LoadedCase& lc, const BagConfig& cfg, uint64_t salt) {
  Rng rng(salt);
  const LobeMask* mask = lc.mask ? &*lc.mask : nullptr;
  return build_bag(lc.windowed, mask, lc.record.severe ? 1 : 0, cfg.bag_size,
                   cfg.patch_size, rng, lc.record.id);
}

std::vector<const uint8_t*> mask_pointers(const Bag& bag, int64_t patch_px) {
  std::vector<const uint8_t*> ptrs(size_t(bag.patches.dim(0)), nullptr);
  if (bag.has_masks)
    for (int64_t i = 0; i < bag.patches.dim(0); ++i)
      ptrs[size_t(i)] = bag.mask_crops.data() + i * patch_px;
  return ptrs;
}

struct StepLosses {
  double mil = 0.0, seg = 0.0, total = 0.0;
};

// One forward/backward over a single bag; returns the contributing losses.
StepLosses bag_forward_backward(Model& model, const Bag& bag, TrainMode mode,
                                const LossConfig& loss_cfg, double batch_inv) {
  StepLosses out;
  EncoderOutput enc = model.encode(bag.patches, /*training=*/true);
  Tensor mil, seg;
  if (mode != TrainMode::kSegOnly) {
    Tensor embeddings = model.embed(enc.features);
    BagPrediction pred = model.classify(embeddings);
    mil = mil_loss(pred.logits, bag.severe_label);
    out.mil = mil.item();
  }
  if (mode != TrainMode::kClsOnly && bag.has_masks) {
    Tensor logits = model.decode(enc, /*training=*/true);
    int64_t px = logits.dim(2) * logits.dim(3);
    seg = seg_loss(logits, mask_pointers(bag, px), loss_cfg.dice_eps);
    out.seg = seg.item();
  }

  Tensor total;
  switch (mode) {
    case TrainMode::kMultiTask:
      if (!seg.defined()) seg = Tensor::scalar(0.0);
      total = total_loss(mil, seg, loss_cfg);
      break;
    case TrainMode::kSegOnly:
      total = seg;
      break;
    case TrainMode::kClsOnly:
      total = mil;
      break;
  }
  if (!total.defined()) return out;  // seg-only bag without masks
  out.total = total.item();
  if (!std::isfinite(out.total))
    throw std::runtime_error("non-finite loss");
  Tensor scaled = batch_inv == 1.0 ? total : scale(total, batch_inv);
  scaled.backward();
  return out;
}

std::vector<std::string> params_for_mode(const Model& model, TrainMode mode) {
  std::vector<std::string> out;
  for (const auto& [name, t] : model.params.items()) {
    bool is_dec = name.rfind("dec.", 0) == 0;
    bool is_head = name.rfind("head.", 0) == 0;
    if (mode == TrainMode::kSegOnly && is_head) continue;
    if (mode == TrainMode::kClsOnly && is_dec) continue;
    out.push_back(name);
  }
  return out;
}

struct ValMetrics {
  double accuracy = 0.0;
  std::optional<double> dsc;
};

std::optional<double> case_macro_dsc(Model& model, const Bag& bag,
                                     int seg_classes);

ValMetrics validate(Model& model, const std::vector<LoadedCase>& data,
                    const std::vector<int>& val_cases,
                    const BagConfig& bag_cfg, uint64_t seed, int fold,
                    int epoch) {
  NoGradGuard no_grad;
  ValMetrics out;
  int64_t correct = 0;
  std::vector<std::optional<double>> dscs;
  for (int ci : val_cases) {
    const LoadedCase& lc = data[size_t(ci)];
    uint64_t salt = derive_seed({seed, 0x76616cULL, uint64_t(fold),
                                 uint64_t(epoch), uint64_t(ci)});
    Bag bag = draw_bag(lc, bag_cfg, salt);
    EncoderOutput enc = model.encode(bag.patches, /*training=*/false);
    BagPrediction pred = model.classify(model.embed(enc.features));
    int predicted = pred.prob_severe > 0.5 ? 1 : 0;
    if (predicted == bag.severe_label) ++correct;
    if (bag.has_masks) {
      auto dsc =
          case_macro_dsc(model, bag, int(model.cfg.backbone.seg_classes));
      if (dsc) dscs.push_back(*dsc);
    }
  }
  out.accuracy =
      val_cases.empty() ? 0.0 : double(correct) / double(val_cases.size());
  Aggregate agg = aggregate_values(dscs);
  if (agg.n > 0) out.dsc = agg.mean;
  return out;
}

// Predicted-vs-ground-truth overlap across all patches of one bag.
std::optional<double> case_macro_dsc(Model& model, const Bag& bag,
                                     int seg_classes) {
  NoGradGuard no_grad;
  if (!bag.has_masks) return std::nullopt;
  EncoderOutput enc = model.encode(bag.patches, /*training=*/false);
  Tensor logits = model.decode(enc, /*training=*/false);
  int64_t n = logits.dim(0), c = logits.dim(1);
  int64_t px = logits.dim(2) * logits.dim(3);
  std::vector<uint8_t> pred(size_t(n * px));
  const auto& z = logits.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t q = 0; q < px; ++q) {
      int best = 0;
      double bv = z[size_t(i * c * px + q)];
      for (int k = 1; k < c; ++k) {
        double v = z[size_t((i * c + k) * px + q)];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      pred[size_t(i * px + q)] = uint8_t(best);
    }
  SegmentationMetrics sm =
      segmentation_metrics(pred, bag.mask_crops, seg_classes);
  return sm.macro.dsc;
}

}  // namespace

TrainFoldResult train_fold(const std::vector<LoadedCase>& data,
                           const FoldPlan& plan, int fold, TrainMode mode,
                           const OptimConfig& optim, const LossConfig& loss,
                           const BagConfig& bag_cfg, const ModelConfig& mcfg,
                           const std::string& out_dir) {
  if (fold < 0 || fold >= plan.n_folds)
    throw std::invalid_argument("train_fold: fold index out of range");
  fs::create_directories(out_dir);
  const FoldSplit& split = plan.splits[size_t(fold)];

  Model model = Model::init(mcfg, derive_seed({optim.seed, uint64_t(fold)}));
  std::vector<std::string> trainable = params_for_mode(model, mode);
  SgdState sgd;

  std::vector<TrainItem> items;
  for (int ci : split.train) {
    TrainItem it;
    it.case_index = ci;
    it.severe = data[size_t(ci)].record.severe;
    it.has_mask = data[size_t(ci)].mask.has_value();
    items.push_back(it);
  }
  items = balance_by_duplication(std::move(items));
  if (mode == TrainMode::kSegOnly) {
    // Only mask-bearing bags contribute gradients; skip the rest.
    std::erase_if(items, [](const TrainItem& it) { return !it.has_mask; });
    if (items.empty())
      throw std::runtime_error(
          "seg-only training needs at least one mask-bearing case");
  }

  std::ofstream log_file(fs::path(out_dir) / "log.jsonl",
                         std::ios::binary | std::ios::trunc);
  if (!log_file)
    throw std::runtime_error("cannot write training log under " + out_dir);

  TrainFoldResult result;
  Rng order_rng(derive_seed({optim.seed, 0x6f72646572ULL, uint64_t(fold)}));
  for (int epoch = 0; epoch < optim.epochs; ++epoch) {
    double lr = poly_lr(epoch, optim);
    std::vector<int> order(items.size());
    for (size_t i = 0; i < items.size(); ++i) order[i] = int(i);
    order_rng.shuffle(order);

    double sum_mil = 0.0, sum_seg = 0.0, sum_total = 0.0;
    int64_t steps = 0;
    size_t pos = 0;
    while (pos < order.size()) {
      int64_t batch = std::min<int64_t>(optim.batch,
                                        int64_t(order.size() - pos));
      double batch_inv = 1.0 / double(batch);
      for (int64_t b = 0; b < batch; ++b, ++pos) {
        const TrainItem& item = items[size_t(order[pos])];
        const LoadedCase& lc = data[size_t(item.case_index)];
        uint64_t salt = derive_seed(
            {optim.seed, 0x626167ULL, uint64_t(fold), uint64_t(epoch),
             uint64_t(item.case_index), uint64_t(item.duplicate)});
        Bag bag = draw_bag(lc, bag_cfg, salt);
        StepLosses losses;
        try {
          losses = bag_forward_backward(model, bag, mode, loss, batch_inv);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error(
              std::string(e.what()) + " at fold " + std::to_string(fold) +
              " epoch " + std::to_string(epoch) + " case " + lc.record.id);
        }
        sum_mil += losses.mil;
        sum_seg += losses.seg;
        sum_total += losses.total;
      }
      for (const std::string& name : trainable)
        model.params.at(name).mutable_grad();  // zero grads where untouched
      sgd_step(model.params, trainable, sgd, lr, optim);
      model.renormalize_banks();
      model.params.zero_grads();
      ++steps;
    }

    ValMetrics val = validate(model, data, split.val, bag_cfg, optim.seed,
                              fold, epoch);
    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.train_mil = sum_mil / double(std::max<size_t>(order.size(), 1));
    el.train_seg = sum_seg / double(std::max<size_t>(order.size(), 1));
    el.train_total = sum_total / double(std::max<size_t>(order.size(), 1));
    el.val_accuracy = val.accuracy;
    el.val_dsc = val.dsc;
    result.log.push_back(el);

    json line = {{"epoch", el.epoch},
                 {"lr", el.lr},
                 {"train_mil", el.train_mil},
                 {"train_seg", el.train_seg},
                 {"train_total", el.train_total},
                 {"val_accuracy", el.val_accuracy}};
    if (el.val_dsc)
      line["val_dsc"] = *el.val_dsc;
    else
      line["val_dsc"] = nullptr;
    log_file << line.dump() << "\n" << std::flush;
  }

  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  model.save_checkpoint_file(result.checkpoint_path);
  return result;
}

FoldReport eval_fold(const std::vector<LoadedCase>& data,
                     const FoldPlan& plan, int fold, Model& model,
                     const BagConfig& bag_cfg, uint64_t seed) {
  NoGradGuard no_grad;
  const FoldSplit& split = plan.splits[size_t(fold)];
  FoldReport report;
  report.fold = fold;

  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<std::optional<double>> dscs, sens, ppvs;
  for (int ci : split.test) {
    const LoadedCase& lc = data[size_t(ci)];
    double prob_sum = 0.0;
    std::optional<double> case_dsc, case_sen, case_ppv;
    std::vector<uint8_t> pred_all, gt_all;
    for (int draw = 0; draw < bag_cfg.eval_draws; ++draw) {
      uint64_t salt = derive_seed({seed, 0x6576616cULL, uint64_t(fold),
                                   uint64_t(ci), uint64_t(draw)});
      Bag bag = draw_bag(lc, bag_cfg, salt);
      EncoderOutput enc = model.encode(bag.patches, /*training=*/false);
      BagPrediction pred = model.classify(model.embed(enc.features));
      prob_sum += pred.prob_severe;
      if (bag.has_masks) {
        Tensor logits = model.decode(enc, /*training=*/false);
        int64_t n = logits.dim(0), c = logits.dim(1);
        int64_t px = logits.dim(2) * logits.dim(3);
        const auto& z = logits.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t q = 0; q < px; ++q) {
            int best = 0;
            double bv = z[size_t(i * c * px + q)];
            for (int k = 1; k < c; ++k) {
              double v = z[size_t((i * c + k) * px + q)];
              if (v > bv) {
                bv = v;
                best = k;
              }
            }
            pred_all.push_back(uint8_t(best));
          }
        gt_all.insert(gt_all.end(), bag.mask_crops.begin(),
                      bag.mask_crops.end());
      }
    }
    if (!pred_all.empty()) {
      SegmentationMetrics sm = segmentation_metrics(
          pred_all, gt_all, int(model.cfg.backbone.seg_classes));
      case_dsc = sm.macro.dsc;
      case_sen = sm.macro.sen;
      case_ppv = sm.macro.ppv;
      ++report.masked_cases;
    }
    double prob = prob_sum / double(bag_cfg.eval_draws);
    int label = lc.record.severe ? 1 : 0;
    probs.push_back(prob);
    labels.push_back(label);
    report.scores.push_back({lc.record.id, prob, label});
    if (case_dsc) dscs.push_back(case_dsc);
    if (case_sen) sens.push_back(case_sen);
    if (case_ppv) ppvs.push_back(case_ppv);

    int predicted = prob > 0.5 ? 1 : 0;
    if (predicted == 1 && label == 1) ++report.counts.tp;
    if (predicted == 0 && label == 0) ++report.counts.tn;
    if (predicted == 1 && label == 0) ++report.counts.fp;
    if (predicted == 0 && label == 1) ++report.counts.fn;
  }

  report.cls = classification_metrics(report.counts);
  report.margins = margin_stats(probs, labels);

  bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (has_pos && has_neg) {
    std::vector<std::pair<double, int>> sl;
    for (size_t i = 0; i < probs.size(); ++i)
      sl.emplace_back(probs[i], labels[i]);
    AucResult ar = auc(sl);
    report.auc_value = ar.auc;
    report.roc = ar.roc;
  }

  Aggregate d = aggregate_values(dscs);
  if (d.n > 0) report.dsc = d.mean;
  Aggregate s = aggregate_values(sens);
  if (s.n > 0) report.sen = s.mean;
  Aggregate p = aggregate_values(ppvs);
  if (p.n > 0) report.ppv = p.mean;
  return report;
}

}  // namespace lobemil
