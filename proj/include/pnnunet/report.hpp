#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pnnunet/evalstat.hpp"
#include "pnnunet/experiment.hpp"

namespace pnn {

/// Fixed-point with half-up rounding after reducing to 15 significant digits, so
/// 0.8665085 prints as 0.866509 at 6 places.
std::string format_fixed(double x, int decimals = 6);

/// One model's evaluation results for the five experiments, in experiment order.
using RunSet = std::vector<EvaluationResult>;

struct ReportRow {
  std::string model;
  LabelSet label = LabelSet::Pooled;
  Metric metric = Metric::Dice;
  std::array<double, kRunCount> values{};
  double mean = 0;
};

/// Per-seed value is the mean over test volumes; 12 rows (3 label sets x 4 metrics).
std::vector<ReportRow> summarize(const RunSet& runs);

struct ComparisonRow {
  std::string model_a;
  std::string model_b;
  LabelSet label = LabelSet::Pooled;
  Metric metric = Metric::Dice;
  TTestResult test;
  std::string stars;
};

/// Paired over (volume id, experiment). Throws DataError when the keys differ.
std::vector<ComparisonRow> compare_models(const RunSet& a, const RunSet& b);

/// PNN against the four baselines, then Transfer against Retrain.
std::vector<std::pair<ModelKind, ModelKind>> default_comparisons();

inline constexpr const char* kCsvHeader = "model,label,metric,s1,s2,s3,s4,s5,mean";

std::string rows_to_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_csv(const std::string& text);
std::string comparisons_to_csv(const std::vector<ComparisonRow>& rows);

/// Five-run mean table per metric (Models | L1 Mean | L2 Mean | L1 & L2 Mean).
std::string means_markdown(const std::vector<ReportRow>& rows, Metric metric, const std::string& caption);
/// p-value table per metric (T-Test in <Metric> | L1+L2 | L1 | L2).
std::string ttest_markdown(const std::vector<ComparisonRow>& rows, Metric metric, const std::string& caption);

enum class ReportFormat { Csv, Markdown };

/// Writes text to path, creating parent directories. Throws IoError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

/// Writes <stem>.csv (summary rows then comparison rows in a second file) or
/// <stem>.md with all tables for the phase. Throws IoError, or ConfigError on empty rows.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const std::string& stem,
                                               const std::vector<ReportRow>& rows,
                                               const std::vector<ComparisonRow>& comparisons, ReportFormat format,
                                               Phase phase);

}  // namespace pnn
