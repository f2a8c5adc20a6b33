#pragma once

#include <filesystem>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace pnn::selftest {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  /// Criterion 10 is checked through a stand-in, marked as such in the output.
  bool substitute = false;
  std::string detail;
  double seconds = 0;
};

struct AcceptanceOptions {
  /// Scratch space for checkpoints and reports; removed and recreated.
  std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "pnnunet_acceptance";
  /// Criteria to run; empty runs all ten.
  std::set<int> only;
  /// Progress lines (training curves); null for silence.
  std::ostream* log = nullptr;
};

/// Runs the acceptance criteria and prints one line per criterion to `out`.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream& out);

/// "criterion 8 FAIL ..." style line.
std::string format_result(const CriterionResult& r);

}  // namespace pnn::selftest
