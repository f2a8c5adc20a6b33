#include <gtest/gtest.h>

#include <cmath>

#include "pnnunet/evalstat.hpp"
#include "pnnunet/rng.hpp"

using namespace pnn;

namespace {

// Composite Simpson integration of the Student-t density from 0 to t.
double t_cdf_by_quadrature(double t, double df) {
  const double norm = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  const auto density = [&](double x) { return norm * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int steps = 20000;
  const double h = t / steps;
  double s = density(0) + density(t);
  for (int i = 1; i < steps; ++i) s += (i % 2 ? 4 : 2) * density(i * h);
  return 0.5 + s * h / 3;
}

MaskVolume random_mask(Rng& rng) {
  MaskVolume m({8, 8, 8});
  // Skewed draws so some labels are rare or absent in some volumes.
  const double p1 = rng.uniform(0, 0.4), p2 = rng.uniform(0, 0.4);
  for (int& l : m.labels) {
    const double u = rng.uniform();
    l = u < p1 ? 1 : (u < p1 + p2 ? 2 : 0);
  }
  return m;
}

}  // namespace

TEST(Confusion, SimpleCases) {
  Rng rng(1);
  MaskVolume truth = random_mask(rng);
  ConfusionCounts self = confusion_counts(truth, truth, 1);
  EXPECT_EQ(self.fp, 0);
  EXPECT_EQ(self.fn, 0);

  MaskVolume empty(truth.extents);
  const auto k = std::count(truth.labels.begin(), truth.labels.end(), 2);
  ConfusionCounts c = confusion_counts(empty, truth, 2);
  EXPECT_EQ(c.fn, k);
  EXPECT_EQ(c.tp, 0);
  EXPECT_EQ(c.total(), 512);

  EXPECT_THROW(confusion_counts(MaskVolume({8, 8, 7}), truth, 1), ShapeError);
}

TEST(Metrics, HandValues) {
  Metrics m = metrics_from_counts({2, 1, 60, 1});
  EXPECT_NEAR(m.dice, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.jaccard, 0.5, 1e-15);
  EXPECT_NEAR(m.sensitivity, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.specificity, 60.0 / 61.0, 1e-15);

  Metrics perfect = metrics_from_counts({5, 0, 7, 0});
  for (Metric k : kAllMetrics) EXPECT_EQ(perfect[k], 1.0);
  Metrics absent = metrics_from_counts({0, 0, 9, 0});
  EXPECT_EQ(absent.dice, 1.0);
  EXPECT_EQ(absent.jaccard, 1.0);
  EXPECT_EQ(absent.sensitivity, 1.0);
  EXPECT_EQ(metrics_from_counts({3, 0, 0, 2}).specificity, 1.0);
}

TEST(Metrics, BruteForceOracleOnRandomVolumes) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    MaskVolume pred = random_mask(rng), truth = random_mask(rng);
    MetricReport report = evaluate_masks(pred, truth);
    for (int label : {1, 2}) {
      std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
      for (Index x = 0; x < 8; ++x)
        for (Index y = 0; y < 8; ++y)
          for (Index z = 0; z < 8; ++z) {
            const int p = pred.at(x, y, z), t = truth.at(x, y, z);
            if (p == label && t == label) ++tp;
            else if (p == label) ++fp;
            else if (t == label) ++fn;
            else ++tn;
          }
      const Metrics& m = label == 1 ? report.l1 : report.l2;
      const double dice = tp + fp + fn ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
      const double jac = tp + fp + fn ? double(tp) / double(tp + fp + fn) : 1.0;
      EXPECT_EQ(m.dice, dice);
      EXPECT_EQ(m.jaccard, jac);
      EXPECT_EQ(m.sensitivity, tp + fn ? double(tp) / double(tp + fn) : 1.0);
      EXPECT_EQ(m.specificity, tn + fp ? double(tn) / double(tn + fp) : 1.0);
      EXPECT_NEAR(m.dice, 2 * m.jaccard / (1 + m.jaccard), 1e-15);
      EXPECT_LE(m.jaccard, m.dice);
    }
    for (Metric k : kAllMetrics)
      EXPECT_DOUBLE_EQ(report.value(LabelSet::Pooled, k), (report.l1[k] + report.l2[k]) / 2);
  }
}

TEST(Metrics, MonotoneAndDiscussionIdentity) {
  const std::int64_t total = 12;
  for (std::int64_t tp = 0; tp <= total; ++tp)
    for (std::int64_t fp = 0; tp + fp <= total; ++fp)
      for (std::int64_t fn = 0; tp + fp + fn <= total; ++fn) {
        const std::int64_t tn = total - tp - fp - fn;
        const Metrics m = metrics_from_counts({tp, fp, tn, fn});
        for (Metric k : kAllMetrics) {
          EXPECT_GE(m[k], 0.0);
          EXPECT_LE(m[k], 1.0);
        }
        const Metrics more = metrics_from_counts({tp + 1, fp, tn, fn});
        if (tp + fp + fn > 0) {
          EXPECT_GE(more.dice, m.dice);
          EXPECT_GE(more.jaccard, m.jaccard);
          EXPECT_GE(more.sensitivity, m.sensitivity);
        }
        // tp up with fn down, tn up with fp down: TPR and TNR both rise.
        if (fn >= 1 && fp >= 1) {
          const Metrics better = metrics_from_counts({tp + 1, fp - 1, tn + 1, fn - 1});
          EXPECT_GT(better.sensitivity, m.sensitivity);
          EXPECT_GT(better.specificity, m.specificity);
          EXPECT_GT(better.dice, m.dice);
          EXPECT_GT(better.jaccard, m.jaccard);
        }
      }
}

TEST(Aggregate, FiveRunMeansAndPooledColumn) {
  const double v[] = {0.7, 0.7, 0.7, 0.7, 0.7};
  EXPECT_DOUBLE_EQ(aggregate_runs(v), 0.7);
  const double four[] = {1, 2, 3, 4};
  EXPECT_THROW(aggregate_runs(four), DataError);
  const double l1[] = {0.1, 0.2, 0.3, 0.4, 0.5}, l2[] = {0.5, 0.5, 0.5, 0.5, 0.5};
  PooledMeans m = aggregate_runs(l1, l2);
  EXPECT_NEAR(m.l1, 0.3, 1e-15);
  EXPECT_NEAR(m.pooled, 0.4, 1e-15);
}

TEST(TTest, HandComputedAndSymmetry) {
  const double same[] = {0.5, 0.6, 0.7};
  TTestResult eq = paired_t_test(same, same);
  EXPECT_EQ(eq.t, 0.0);
  EXPECT_EQ(eq.p, 1.0);

  const double a[] = {1, 2, 3, 4, 5}, zero[] = {0, 0, 0, 0, 0};
  TTestResult r = paired_t_test(a, zero);
  EXPECT_NEAR(r.t, 3.0 / (std::sqrt(2.5) / std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(r.t, 4.2426, 1e-4);
  EXPECT_EQ(r.df, 4);
  EXPECT_NEAR(r.p, 2 * (1 - t_cdf_by_quadrature(r.t, 4)), 1e-10);
  TTestResult s = paired_t_test(zero, a);
  EXPECT_DOUBLE_EQ(s.t, -r.t);
  EXPECT_DOUBLE_EQ(s.p, r.p);

  const double shifted[] = {2, 3, 4, 5, 6};
  EXPECT_THROW(paired_t_test(shifted, a), DegenerateVariance);
  const double one[] = {1};
  EXPECT_THROW(paired_t_test(one, one), ConfigError);
  EXPECT_THROW(paired_t_test(a, same), DataError);
}

TEST(StudentT, ClosedForms) {
  for (double df : {1.0, 2.0, 7.0, 30.0}) EXPECT_EQ(student_t_cdf(0, df), 0.5);
  EXPECT_NEAR(student_t_cdf(1, 1), 0.75, 1e-12);
  EXPECT_NEAR(student_t_cdf(-1, 1), 0.25, 1e-12);
  // df = 2 has cdf 1/2 + t / (2 sqrt(t^2 + 2)).
  for (double t : {-3.0, -0.4, 0.9, 5.0}) EXPECT_NEAR(student_t_cdf(t, 2), 0.5 + t / (2 * std::sqrt(t * t + 2)), 1e-12);
  EXPECT_THROW(student_t_cdf(1, 0.5), ConfigError);
}

TEST(StudentT, MatchesQuadratureOnGrid) {
  double worst = 0;
  for (int df = 1; df <= 100; df += (df < 10 ? 1 : 9))
    for (double t = -10; t <= 10; t += 0.37) {
      const double err = std::abs(student_t_cdf(t, df) - t_cdf_by_quadrature(t, df));
      worst = std::max(worst, err);
    }
  EXPECT_LT(worst, 1e-8);
}

TEST(Stars, Tiers) {
  EXPECT_EQ(significance_stars(0.0000), "**");
  EXPECT_EQ(significance_stars(0.0197), "*");
  EXPECT_EQ(significance_stars(0.0699), "");
  EXPECT_EQ(significance_stars(0.05), "");
}
