#include "lobemil/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lobemil {

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  if (c.total() == 0)
    throw std::invalid_argument("classification_metrics: empty counts");
  ClassificationMetrics m;
  m.accuracy = double(c.tp + c.tn) / double(c.total());
  if (c.tp + c.fp > 0) m.precision = double(c.tp) / double(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = double(c.tp) / double(c.tp + c.fn);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  return m;
}

AucResult auc(const std::vector<std::pair<double, int>>& score_label) {
  int64_t n_pos = 0, n_neg = 0;
  for (const auto& [s, l] : score_label) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument(
        "auc: needs at least one positive and one negative");

  std::vector<std::pair<double, int>> sorted = score_label;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Rank sum of positives with average ranks for ties.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
    double avg_rank = 0.5 * double(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k)
      if (sorted[k].second) rank_sum_pos += avg_rank;
    i = j;
  }
  double a = (rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1)) /
             (double(n_pos) * double(n_neg));

  // ROC polyline: walk thresholds from high to low, grouping tied scores.
  AucResult out;
  out.auc = a;
  out.roc.push_back({0.0, 0.0});
  int64_t tp = 0, fp = 0;
  int64_t k = int64_t(sorted.size()) - 1;
  while (k >= 0) {
    double s = sorted[size_t(k)].first;
    while (k >= 0 && sorted[size_t(k)].first == s) {
      (sorted[size_t(k)].second ? tp : fp)++;
      --k;
    }
    out.roc.push_back({double(fp) / double(n_neg), double(tp) / double(n_pos)});
  }
  return out;
}

SegmentationMetrics segmentation_metrics(const std::vector<uint8_t>& pred,
                                         const std::vector<uint8_t>& gt,
                                         int num_classes) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("segmentation_metrics: extent mismatch (" +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(gt.size()) + " voxels)");
  if (num_classes < 2)
    throw std::invalid_argument("segmentation_metrics: need >= 2 classes");
  std::vector<int64_t> inter(size_t(num_classes), 0),
      gsum(size_t(num_classes), 0), psum(size_t(num_classes), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes || gt[i] >= num_classes)
      throw std::invalid_argument(
          "segmentation_metrics: label outside [0, C)");
    ++psum[pred[i]];
    ++gsum[gt[i]];
    if (pred[i] == gt[i]) ++inter[gt[i]];
  }

  SegmentationMetrics out;
  std::vector<double> dscs, sens, ppvs;
  for (int c = 1; c < num_classes; ++c) {
    OverlapMetrics om;
    int64_t g = gsum[size_t(c)], p = psum[size_t(c)], in = inter[size_t(c)];
    if (g > 0 || p > 0) {
      om.dsc = 2.0 * double(in) / double(g + p);
      if (g > 0) om.sen = double(in) / double(g);
      if (p > 0) om.ppv = double(in) / double(p);
      if (om.dsc) dscs.push_back(*om.dsc);
      if (om.sen) sens.push_back(*om.sen);
      if (om.ppv) ppvs.push_back(*om.ppv);
    }
    out.per_class.push_back(om);
  }
  auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  out.macro.dsc = mean_of(dscs);
  out.macro.sen = mean_of(sens);
  out.macro.ppv = mean_of(ppvs);
  return out;
}

namespace {
// Linear interpolation between closest ranks (the common "type 7" rule).
double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  double pos = p * double(sorted.size() - 1);
  size_t lo = size_t(pos);
  size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}
}  // namespace

MarginStats margin_stats(const std::vector<double>& probabilities,
                         const std::vector<int>& labels) {
  if (probabilities.size() != labels.size())
    throw std::invalid_argument("margin_stats: length mismatch");
  MarginStats out;
  out.margins.reserve(probabilities.size());
  for (size_t i = 0; i < probabilities.size(); ++i) {
    double p = probabilities[i];
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("margin_stats: probability outside [0,1]");
    double margin = std::fabs(p - double(labels[i]));
    out.margins.push_back(margin);
    if (margin < 0.5) ++out.correct;
  }
  std::vector<double> sorted = out.margins;
  std::sort(sorted.begin(), sorted.end());
  out.q1 = quantile(sorted, 0.25);
  out.median = quantile(sorted, 0.50);
  out.q3 = quantile(sorted, 0.75);
  double iqr = out.q3 - out.q1;
  double lo_fence = out.q1 - 1.5 * iqr, hi_fence = out.q3 + 1.5 * iqr;
  out.whisker_lo = out.q3;
  out.whisker_hi = out.q1;
  for (double v : sorted) {
    if (v >= lo_fence && v <= hi_fence) {
      out.whisker_lo = std::min(out.whisker_lo, v);
      out.whisker_hi = std::max(out.whisker_hi, v);
    } else {
      out.outliers.push_back(v);
    }
  }
  return out;
}

Aggregate aggregate_values(const std::vector<std::optional<double>>& values) {
  Aggregate a;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++a.n;
    }
  if (a.n == 0) return a;
  a.mean = sum / double(a.n);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - a.mean) * (*v - a.mean);
  a.stddev = std::sqrt(ss / double(a.n));
  return a;
}

}  // namespace lobemil
