#include "pnnunet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pnn {

std::string format_fixed(double x, int decimals) {
  if (decimals < 0) throw ConfigError("decimals must be >= 0");
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  // 15 significant digits absorb accumulated error (five copies of 0.8665085
  // average to 0.86650849999999990); the half-up step then works on decimals.
  const double a = std::fabs(x);
  const int mag = a == 0 ? 0 : static_cast<int>(std::floor(std::log10(a)));
  const int places = std::clamp(14 - mag, 0, 340);
  std::vector<char> buf(static_cast<std::size_t>(places + 330));
  std::snprintf(buf.data(), buf.size(), "%.*f", places, a);
  const std::string s(buf.data());
  std::string ip = s, fp;
  if (const auto dot = s.find('.'); dot != std::string::npos) {
    ip = s.substr(0, dot);
    fp = s.substr(dot + 1);
  }
  const bool up = static_cast<int>(fp.size()) > decimals && fp[static_cast<std::size_t>(decimals)] >= '5';
  fp.resize(static_cast<std::size_t>(decimals), '0');
  std::string digits = ip + fp;
  if (up) {
    int i = static_cast<int>(digits.size()) - 1;
    for (; i >= 0; --i) {
      if (digits[static_cast<std::size_t>(i)] == '9') {
        digits[static_cast<std::size_t>(i)] = '0';
      } else {
        ++digits[static_cast<std::size_t>(i)];
        break;
      }
    }
    if (i < 0) digits.insert(digits.begin(), '1');
  }
  const std::size_t int_len = digits.size() - static_cast<std::size_t>(decimals);
  std::string out = digits.substr(0, int_len);
  if (decimals > 0) out += "." + digits.substr(int_len);
  if (std::signbit(x) && out.find_first_not_of("0.") != std::string::npos) out.insert(out.begin(), '-');
  return out;
}

namespace {

double per_volume_mean(const EvaluationResult& r, LabelSet label, Metric metric) {
  if (r.reports.empty()) throw DataError("run " + r.name + " has no evaluated volumes");
  double total = 0;
  for (const auto& v : r.reports) total += v.value(label, metric);
  return total / static_cast<double>(r.reports.size());
}

void check_runs(const RunSet& runs) {
  if (runs.size() != static_cast<std::size_t>(kRunCount))
    throw DataError("expected " + std::to_string(kRunCount) + " runs, got " + std::to_string(runs.size()));
  for (const auto& r : runs)
    if (r.model != runs.front().model || r.phase != runs.front().phase)
      throw DataError("run set mixes models or phases");
}

LabelSet parse_label_set(const std::string& s) {
  for (LabelSet l : kAllLabelSets)
    if (label_set_name(l) == s) return l;
  throw FormatError("unknown label set '" + s + "'");
}

std::string metric_title(Metric m) {
  std::string s = metric_name(m);
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string title_for(const std::string& name) {
  for (ModelKind k : kAllModels)
    if (model_name(k) == name) return model_title(k);
  return name;
}

}  // namespace

std::vector<ReportRow> summarize(const RunSet& runs) {
  check_runs(runs);
  std::vector<ReportRow> rows;
  for (LabelSet label : kAllLabelSets)
    for (Metric metric : kAllMetrics) {
      ReportRow row;
      row.model = model_name(runs.front().model);
      row.label = label;
      row.metric = metric;
      for (std::size_t i = 0; i < runs.size(); ++i) row.values[i] = per_volume_mean(runs[i], label, metric);
      row.mean = aggregate_runs(row.values);
      rows.push_back(row);
    }
  return rows;
}

std::vector<ComparisonRow> compare_models(const RunSet& a, const RunSet& b) {
  check_runs(a);
  check_runs(b);
  using Key = std::pair<std::string, int>;
  std::map<Key, const MetricReport*> right;
  for (const auto& r : b)
    for (const auto& v : r.reports)
      if (!right.emplace(Key{v.volume_id, r.experiment}, &v).second)
        throw DataError("duplicate volume " + v.volume_id + " in " + r.name);

  std::vector<std::pair<const MetricReport*, const MetricReport*>> pairs;
  std::set<Key> seen;
  for (const auto& r : a)
    for (const auto& v : r.reports) {
      const Key key{v.volume_id, r.experiment};
      const auto it = right.find(key);
      if (it == right.end() || !seen.insert(key).second)
        throw DataError("volume " + v.volume_id + " in experiment " + std::to_string(r.experiment) +
                        " does not pair between " + model_name(a.front().model) + " and " + model_name(b.front().model));
      pairs.emplace_back(&v, it->second);
    }
  if (pairs.size() != right.size()) throw DataError("the two run sets cover different test volumes");

  std::vector<ComparisonRow> rows;
  for (LabelSet label : kAllLabelSets)
    for (Metric metric : kAllMetrics) {
      std::vector<double> xa, xb;
      for (const auto& [pa, pb] : pairs) {
        xa.push_back(pa->value(label, metric));
        xb.push_back(pb->value(label, metric));
      }
      ComparisonRow row;
      row.model_a = model_name(a.front().model);
      row.model_b = model_name(b.front().model);
      row.label = label;
      row.metric = metric;
      row.test = paired_t_test(xa, xb);
      row.stars = significance_stars(row.test.p);
      rows.push_back(row);
    }
  return rows;
}

std::vector<std::pair<ModelKind, ModelKind>> default_comparisons() {
  return {{ModelKind::PNN, ModelKind::Deep},
          {ModelKind::PNN, ModelKind::Wide},
          {ModelKind::PNN, ModelKind::EnsembleTransfer},
          {ModelKind::PNN, ModelKind::EnsembleRetrain},
          {ModelKind::EnsembleTransfer, ModelKind::EnsembleRetrain}};
}

std::string rows_to_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << label_set_name(r.label) << ',' << metric_name(r.metric);
    for (double v : r.values) out << ',' << format_fixed(v);
    out << ',' << format_fixed(r.mean) << '\n';
  }
  return out.str();
}

std::vector<ReportRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("CSV header must be '" + std::string(kCsvHeader) + "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("CSV row needs 9 cells: " + line);
    ReportRow r;
    r.model = cells[0];
    r.label = parse_label_set(cells[1]);
    try {
      r.metric = parse_metric(cells[2]);
      for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = std::stod(cells[3 + i]);
      r.mean = std::stod(cells[8]);
    } catch (const std::logic_error&) {
      throw FormatError("bad number in CSV row: " + line);
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    rows.push_back(r);
  }
  return rows;
}

std::string comparisons_to_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "model_a,model_b,label,metric,t,df,p,stars\n";
  for (const auto& r : rows)
    out << r.model_a << ',' << r.model_b << ',' << label_set_name(r.label) << ',' << metric_name(r.metric) << ','
        << format_fixed(r.test.t) << ',' << r.test.df << ',' << format_fixed(r.test.p) << ',' << r.stars << '\n';
  return out.str();
}

std::string means_markdown(const std::vector<ReportRow>& rows, Metric metric, const std::string& caption) {
  // model -> label -> mean, in first-seen model order
  std::vector<std::string> order;
  std::map<std::string, std::map<LabelSet, double>> cells;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    if (!cells.count(r.model)) order.push_back(r.model);
    cells[r.model][r.label] = r.mean;
  }
  std::ostringstream out;
  out << "| Models | L1 Mean | L2 Mean | L1 & L2 Mean |\n|---|---|---|---|\n";
  for (const auto& m : order) {
    auto& c = cells[m];
    if (!c.count(LabelSet::L1) || !c.count(LabelSet::L2) || !c.count(LabelSet::Pooled))
      throw DataError("incomplete rows for model " + m);
    out << "| " << title_for(m) << " | " << format_fixed(c[LabelSet::L1]) << " | " << format_fixed(c[LabelSet::L2]) << " | "
        << format_fixed(c[LabelSet::Pooled]) << " |\n";
  }
  out << "\n" << caption << "\n";
  return out.str();
}

std::string ttest_markdown(const std::vector<ComparisonRow>& rows, Metric metric, const std::string& caption) {
  using Pair = std::pair<std::string, std::string>;
  std::vector<Pair> order;
  std::map<Pair, std::map<LabelSet, const ComparisonRow*>> cells;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    const Pair key{r.model_a, r.model_b};
    if (!cells.count(key)) order.push_back(key);
    cells[key][r.label] = &r;
  }
  std::ostringstream out;
  out << "| T-Test in " << metric_title(metric) << " | L1+L2 | L1 | L2 |\n|---|---|---|---|\n";
  for (const auto& key : order) {
    out << "| " << title_for(key.first) << " versus " << title_for(key.second);
    for (LabelSet l : kAllLabelSets) {
      const auto it = cells[key].find(l);
      if (it == cells[key].end()) throw DataError("incomplete comparison rows");
      out << " | " << format_fixed(it->second->test.p);
      if (!it->second->stars.empty()) out << ' ' << it->second->stars;
    }
    out << " |\n";
  }
  out << "\n" << caption << "\n";
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const std::string& stem,
                                               const std::vector<ReportRow>& rows,
                                               const std::vector<ComparisonRow>& comparisons, ReportFormat format,
                                               Phase phase) {
  if (rows.empty()) throw ConfigError("nothing to report");
  std::vector<std::filesystem::path> written;
  if (format == ReportFormat::Csv) {
    written.push_back(dir / (stem + ".csv"));
    write_text(written.back(), rows_to_csv(rows));
    if (!comparisons.empty()) {
      written.push_back(dir / (stem + "-ttest.csv"));
      write_text(written.back(), comparisons_to_csv(comparisons));
    }
    return written;
  }
  const std::string when = phase == Phase::NoAug ? "without" : "with";
  std::ostringstream md;
  for (Metric m : kAllMetrics) {
    md << "## " << metric_title(m) << "\n\n";
    if (!comparisons.empty())
      md << ttest_markdown(comparisons, m, "T-Test of " + metric_title(m) + " " + when + " Data Augmentation (p-value, alpha=0.05)")
         << "\n";
    md << means_markdown(rows, m, "Five-Run Average of " + metric_title(m) + " " + when + " Data Augmentation") << "\n";
  }
  written.push_back(dir / (stem + ".md"));
  write_text(written.back(), md.str());
  return written;
}

}  // namespace pnn
