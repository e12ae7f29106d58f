#include <doctest.h>

#include <stdexcept>
#include <cmath>

#include "lobemil/evalmetrics.hpp"
#include "lobemil/rng.hpp"

using namespace lobemil;

TEST_CASE("classification metrics follow the confusion-count formulas") {
  ConfusionCounts c{3, 5, 1, 1};
  ClassificationMetrics m = classification_metrics(c);
  CHECK(m.accuracy == doctest::Approx(0.8));
  CHECK(*m.precision == doctest::Approx(0.75));
  CHECK(*m.recall == doctest::Approx(0.75));
  CHECK(*m.f1 == doctest::Approx(0.75));
}

TEST_CASE("a perfect classifier scores one everywhere") {
  ClassificationMetrics m = classification_metrics({4, 6, 0, 0});
  CHECK(m.accuracy == 1.0);
  CHECK(*m.precision == 1.0);
  CHECK(*m.recall == 1.0);
  CHECK(*m.f1 == 1.0);
}

TEST_CASE("all-negative predictions leave precision undefined") {
  ClassificationMetrics m = classification_metrics({0, 5, 0, 3});
  CHECK(!m.precision.has_value());
  CHECK(*m.recall == 0.0);
  CHECK(!m.f1.has_value());
}

TEST_CASE("f1 is the harmonic mean and symmetric under swap") {
  ConfusionCounts a{6, 1, 2, 3};  // precision 0.75, recall 2/3
  ClassificationMetrics m = classification_metrics(a);
  double p = *m.precision, r = *m.recall;
  CHECK(*m.f1 == doctest::Approx(2.0 * p * r / (p + r)));
  // Swapping fp and fn swaps precision and recall but keeps f1.
  ClassificationMetrics swapped = classification_metrics({6, 1, 3, 2});
  CHECK(*swapped.precision == doctest::Approx(r));
  CHECK(*swapped.recall == doctest::Approx(p));
  CHECK(*swapped.f1 == doctest::Approx(*m.f1));
}

TEST_CASE("auc handles separation and ties with half credit") {
  // Perfect separation.
  AucResult perfect = auc({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}});
  CHECK(perfect.auc == doctest::Approx(1.0));
  // All tied.
  AucResult tied = auc({{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}});
  CHECK(tied.auc == doctest::Approx(0.5));
  // Hand example: positives {0.9, 0.4}, negatives {0.6, 0.1} -> 3/4.
  AucResult hand = auc({{0.9, 1}, {0.4, 1}, {0.6, 0}, {0.1, 0}});
  CHECK(hand.auc == doctest::Approx(0.75));
}

TEST_CASE("auc rejects single-class inputs") {
  CHECK_THROWS_AS(auc({{0.5, 1}, {0.7, 1}}), std::invalid_argument);
}

TEST_CASE("auc matches exhaustive pair counting on random draws") {
  Rng rng(51);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::pair<double, int>> sl;
    int n = 12;
    for (int i = 0; i < n; ++i) {
      double score = std::round(rng.uniform() * 10.0) / 10.0;  // force ties
      sl.emplace_back(score, i < 3 ? 1 : int(rng.uniform_int(2)));
    }
    int pos = 0, neg = 0;
    for (auto& [s, l] : sl) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) continue;
    double wins = 0.0;
    for (auto& [sp, lp] : sl)
      for (auto& [sn, ln] : sl) {
        if (!(lp == 1 && ln == 0)) continue;
        if (sp > sn)
          wins += 1.0;
        else if (sp == sn)
          wins += 0.5;
      }
    AucResult r = auc(sl);
    CHECK(r.auc == doctest::Approx(wins / double(pos * neg)).epsilon(1e-12));
  }
}

TEST_CASE("rank auc equals the trapezoidal area under the ROC polyline") {
  Rng rng(52);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::pair<double, int>> sl;
    for (int i = 0; i < 15; ++i)
      sl.emplace_back(std::round(rng.uniform() * 20.0) / 20.0,
                      i < 4 ? 1 : int(rng.uniform_int(2)));
    int pos = 0, neg = 0;
    for (auto& [s, l] : sl) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) continue;
    AucResult r = auc(sl);
    double area = 0.0;
    for (size_t i = 1; i < r.roc.size(); ++i)
      area += 0.5 * (r.roc[i].tpr + r.roc[i - 1].tpr) *
              (r.roc[i].fpr - r.roc[i - 1].fpr);
    CHECK(std::fabs(area - r.auc) < 1e-9);
  }
}

TEST_CASE("segmentation metrics on identical, disjoint and partial maps") {
  std::vector<uint8_t> gt{0, 1, 1, 2, 2, 2, 0, 0};
  SegmentationMetrics same = segmentation_metrics(gt, gt, 3);
  CHECK(*same.per_class[0].dsc == 1.0);
  CHECK(*same.per_class[1].dsc == 1.0);
  CHECK(*same.macro.dsc == 1.0);
  CHECK(*same.macro.sen == 1.0);
  CHECK(*same.macro.ppv == 1.0);

  std::vector<uint8_t> disjoint{1, 0, 0, 1, 1, 1, 2, 2};
  SegmentationMetrics none = segmentation_metrics(disjoint, gt, 3);
  CHECK(*none.macro.dsc == 0.0);

  // |G| = 4, |P| = 6, |G and P| = 3 for class 1.
  std::vector<uint8_t> g2{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  std::vector<uint8_t> p2{1, 1, 1, 0, 1, 1, 1, 0, 0, 0};
  SegmentationMetrics part = segmentation_metrics(p2, g2, 2);
  CHECK(*part.per_class[0].dsc == doctest::Approx(0.6));
  CHECK(*part.per_class[0].sen == doctest::Approx(0.75));
  CHECK(*part.per_class[0].ppv == doctest::Approx(0.5));
}

TEST_CASE("dsc is symmetric; sen and ppv swap under exchanging maps") {
  Rng rng(53);
  std::vector<uint8_t> a(50), b(50);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = uint8_t(rng.uniform_int(3));
    b[i] = uint8_t(rng.uniform_int(3));
  }
  SegmentationMetrics ab = segmentation_metrics(a, b, 3);
  SegmentationMetrics ba = segmentation_metrics(b, a, 3);
  for (size_t c = 0; c < ab.per_class.size(); ++c) {
    if (ab.per_class[c].dsc)
      CHECK(*ab.per_class[c].dsc == doctest::Approx(*ba.per_class[c].dsc));
    if (ab.per_class[c].sen && ba.per_class[c].ppv)
      CHECK(*ab.per_class[c].sen == doctest::Approx(*ba.per_class[c].ppv));
  }
}

TEST_CASE("classes absent from both maps are excluded from the macro") {
  std::vector<uint8_t> gt{0, 1, 1, 0};
  std::vector<uint8_t> pred{0, 1, 0, 0};
  SegmentationMetrics m = segmentation_metrics(pred, gt, 6);
  CHECK(m.per_class.size() == 5);
  CHECK(m.per_class[0].dsc.has_value());
  for (size_t c = 1; c < 5; ++c) CHECK(!m.per_class[c].dsc.has_value());
  CHECK(*m.macro.dsc == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("margins summarize correctness at the 0.5 threshold") {
  MarginStats s = margin_stats({0.9, 0.6}, {1, 0});
  CHECK(s.margins[0] == doctest::Approx(0.1));
  CHECK(s.margins[1] == doctest::Approx(0.6));
  CHECK(s.correct == 1);
}

TEST_CASE("margin correctness equals thresholded confusion accuracy") {
  Rng rng(54);
  for (int rep = 0; rep < 30; ++rep) {
    int n = 25;
    ConfusionCounts counts;
    std::vector<double> probs;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      double p = rng.uniform();
      int l = int(rng.uniform_int(2));
      probs.push_back(p);
      labels.push_back(l);
      int pred = p > 0.5 ? 1 : 0;
      if (pred == 1 && l == 1) ++counts.tp;
      if (pred == 0 && l == 0) ++counts.tn;
      if (pred == 1 && l == 0) ++counts.fp;
      if (pred == 0 && l == 1) ++counts.fn;
    }
    MarginStats s = margin_stats(probs, labels);
    CHECK(s.correct == counts.tp + counts.tn);
  }
}

TEST_CASE("boxplot quartiles and whiskers are ordered sensibly") {
  Rng rng(55);
  std::vector<double> probs;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    probs.push_back(rng.uniform());
    labels.push_back(int(rng.uniform_int(2)));
  }
  MarginStats s = margin_stats(probs, labels);
  CHECK(s.q1 <= s.median);
  CHECK(s.median <= s.q3);
  CHECK(s.whisker_lo <= s.q1);
  CHECK(s.whisker_hi >= s.q3);
  for (double o : s.outliers)
    CHECK((o < s.q1 - 1.5 * (s.q3 - s.q1) || o > s.q3 + 1.5 * (s.q3 - s.q1)));
}

TEST_CASE("fold aggregation reports mean and population std") {
  std::vector<std::optional<double>> one{0.7};
  Aggregate a = aggregate_values(one);
  CHECK(a.mean == 0.7);
  CHECK(a.stddev == 0.0);

  std::vector<std::optional<double>> two{0.9, 1.0};
  Aggregate b = aggregate_values(two);
  CHECK(b.mean == doctest::Approx(0.95));

  std::vector<std::optional<double>> five{0.8, 0.9, 1.0, std::nullopt, 0.7};
  Aggregate c = aggregate_values(five);
  CHECK(c.n == 4);
  double mean = (0.8 + 0.9 + 1.0 + 0.7) / 4.0;
  double var = ((0.8 - mean) * (0.8 - mean) + (0.9 - mean) * (0.9 - mean) +
                (1.0 - mean) * (1.0 - mean) + (0.7 - mean) * (0.7 - mean)) /
               4.0;
  CHECK(c.mean == doctest::Approx(mean));
  CHECK(c.stddev == doctest::Approx(std::sqrt(var)));
}
