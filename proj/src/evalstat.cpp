#include "pnnunet/evalstat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pnnunet/errors.hpp"

namespace pnn {

ConfusionCounts confusion_counts(std::span<const int> pred, std::span<const int> truth, int label) {
  if (pred.size() != truth.size()) throw ShapeError("prediction and truth sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == label, t = truth[i] == label;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

ConfusionCounts confusion_counts(const MaskVolume& pred, const MaskVolume& truth, int label) {
  if (pred.extents != truth.extents) throw ShapeError("prediction and truth extents differ");
  if (label < 1 || label >= kLabelCount) throw LabelError("foreground label must be 1 or 2");
  return confusion_counts(std::span<const int>(pred.labels), std::span<const int>(truth.labels), label);
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Dice: return "dice";
    case Metric::Jaccard: return "jaccard";
    case Metric::Sensitivity: return "sensitivity";
    case Metric::Specificity: return "specificity";
  }
  return {};
}

Metric parse_metric(const std::string& name) {
  for (Metric m : kAllMetrics)
    if (metric_name(m) == name) return m;
  throw FormatError("unknown metric '" + name + "'");
}

double Metrics::operator[](Metric m) const {
  switch (m) {
    case Metric::Dice: return dice;
    case Metric::Jaccard: return jaccard;
    case Metric::Sensitivity: return sensitivity;
    case Metric::Specificity: return specificity;
  }
  return 0;
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) throw DomainError("confusion counts must be nonnegative");
  const auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fn),
          ratio(c.tn, c.tn + c.fp)};
}

std::string label_set_name(LabelSet s) {
  switch (s) {
    case LabelSet::L1: return "L1";
    case LabelSet::L2: return "L2";
    case LabelSet::Pooled: return "L1+L2";
  }
  return {};
}

double MetricReport::value(LabelSet set, Metric m) const {
  switch (set) {
    case LabelSet::L1: return l1[m];
    case LabelSet::L2: return l2[m];
    case LabelSet::Pooled: return (l1[m] + l2[m]) / 2;
  }
  return 0;
}

MetricReport evaluate_masks(const MaskVolume& pred, const MaskVolume& truth) {
  return {truth.id, metrics_from_counts(confusion_counts(pred, truth, 1)),
          metrics_from_counts(confusion_counts(pred, truth, 2))};
}

double aggregate_runs(std::span<const double> per_seed) {
  if (per_seed.size() != kRunCount)
    throw DataError("expected " + std::to_string(kRunCount) + " per-seed values, got " + std::to_string(per_seed.size()));
  return std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / static_cast<double>(kRunCount);
}

PooledMeans aggregate_runs(std::span<const double> l1_per_seed, std::span<const double> l2_per_seed) {
  PooledMeans m;
  m.l1 = aggregate_runs(l1_per_seed);
  m.l2 = aggregate_runs(l2_per_seed);
  m.pooled = (m.l1 + m.l2) / 2;
  return m;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("paired samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw ConfigError("paired t-test needs at least two pairs");
  TTestResult r;
  r.n = n;
  r.df = static_cast<int>(n) - 1;
  r.mean_a = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  r.mean_b = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0) {
    if (mean != 0) throw DegenerateVariance("differences are constant and nonzero");
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = r.df;
  r.p = std::clamp(incomplete_beta(df / 2, 0.5, df / (df + r.t * r.t)), 0.0, 1.0);
  return r;
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300, eps = 1e-16;
  double c = 1, d = 1 - (a + b) * x / (a + 1);
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1) * (a + m2));
    d = 1 + num * d;
    c = 1 + num / c;
    if (std::abs(d) < tiny) d = tiny;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1));
    d = 1 + num * d;
    c = 1 + num / c;
    if (std::abs(d) < tiny) d = tiny;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw DomainError("incomplete beta needs a, b > 0");
  if (!(x >= 0 && x <= 1)) throw DomainError("incomplete beta needs x in [0, 1]");
  if (x == 0 || x == 1) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_fraction(a, b, x) / a;
  return 1 - front * beta_fraction(b, a, 1 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df >= 1)) throw ConfigError("degrees of freedom must be >= 1");
  if (std::isnan(t)) throw DomainError("t is NaN");
  if (t == 0) return 0.5;
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2, 0.5, df / (df + t * t));
  return t > 0 ? 1 - tail : tail;
}

std::string significance_stars(double p) {
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return {};
}

}  // namespace pnn
