#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "pnnunet/volume.hpp"

namespace pnn::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Pairs imagesTr/<name> with labelsTr/<name> under an MSD task directory,
/// skipping "._" resource-fork files. Images are min-max normalized.
std::vector<CacheEntry> load_msd_task(const std::filesystem::path& dir);

}  // namespace pnn::cli
