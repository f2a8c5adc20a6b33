#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pnnunet/volume.hpp"

namespace pnn {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// One-vs-rest counts for `label` over all voxels.
ConfusionCounts confusion_counts(std::span<const int> pred, std::span<const int> truth, int label);
ConfusionCounts confusion_counts(const MaskVolume& pred, const MaskVolume& truth, int label);

enum class Metric { Dice, Jaccard, Sensitivity, Specificity };
inline constexpr std::array<Metric, 4> kAllMetrics{Metric::Dice, Metric::Jaccard, Metric::Sensitivity, Metric::Specificity};
std::string metric_name(Metric m);
Metric parse_metric(const std::string& name);

struct Metrics {
  double dice = 0, jaccard = 0, sensitivity = 0, specificity = 0;

  double operator[](Metric m) const;
};

/// Dice, Jaccard and sensitivity are 1 when tp = fp = fn = 0; specificity is
/// 1 when tn + fp = 0.
Metrics metrics_from_counts(const ConfusionCounts& c);

enum class LabelSet { L1, L2, Pooled };
inline constexpr std::array<LabelSet, 3> kAllLabelSets{LabelSet::Pooled, LabelSet::L1, LabelSet::L2};
std::string label_set_name(LabelSet s);

/// Per-volume scores for both foreground labels. The pooled entry is the
/// mean of the L1 and L2 entries.
struct MetricReport {
  std::string volume_id;
  Metrics l1;
  Metrics l2;

  double value(LabelSet set, Metric m) const;
};

MetricReport evaluate_masks(const MaskVolume& pred, const MaskVolume& truth);

inline constexpr std::size_t kRunCount = 5;

/// Mean of exactly five per-seed values.
double aggregate_runs(std::span<const double> per_seed);

struct PooledMeans {
  double l1 = 0, l2 = 0, pooled = 0;
};

/// Five-run means per label and the pooled column (mean of L1 and L2).
PooledMeans aggregate_runs(std::span<const double> l1_per_seed, std::span<const double> l2_per_seed);

struct TTestResult {
  double t = 0;
  int df = 0;
  double p = 1;
  double mean_a = 0, mean_b = 0;
  std::size_t n = 0;
};

/// Paired two-sided t-test on the differences a - b against zero.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

/// "**" for p < 0.01, "*" for p < 0.05, empty otherwise.
std::string significance_stars(double p);

}  // namespace pnn
