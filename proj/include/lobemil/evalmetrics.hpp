#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace lobemil {

struct ConfusionCounts {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  int64_t total() const { return tp + tn + fp + fn; }
};

// Ratios with zero denominators are reported as absent, not zero.
struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

ClassificationMetrics classification_metrics(const ConfusionCounts& counts);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};

struct AucResult {
  double auc = 0.5;
  std::vector<RocPoint> roc;  // polyline from (0,0) to (1,1)
};

// Rank-based (Mann-Whitney) AUC with half credit for ties; also emits the
// ROC polyline whose trapezoidal area equals the rank statistic. Throws if
// either class is missing.
AucResult auc(const std::vector<std::pair<double, int>>& score_label);

struct OverlapMetrics {
  std::optional<double> dsc, sen, ppv;
};

struct SegmentationMetrics {
  std::vector<OverlapMetrics> per_class;  // index 0 = class 1 (lobes only)
  OverlapMetrics macro;                   // unweighted over available lobes
};

// Voxel-wise overlap between predicted and ground-truth label maps with C
// classes; class 0 is background and excluded from the macro average.
// Classes absent from both maps are excluded entirely.
SegmentationMetrics segmentation_metrics(const std::vector<uint8_t>& pred,
                                         const std::vector<uint8_t>& gt,
                                         int num_classes);

struct MarginStats {
  std::vector<double> margins;  // |p - l| per case
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double whisker_lo = 0.0, whisker_hi = 0.0;
  std::vector<double> outliers;
  int64_t correct = 0;  // margins below 0.5
};

MarginStats margin_stats(const std::vector<double>& probabilities,
                         const std::vector<int>& labels);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population
  int64_t n = 0;
};

// Mean and population standard deviation over folds, skipping absent values.
Aggregate aggregate_values(const std::vector<std::optional<double>>& values);

}  // namespace lobemil
