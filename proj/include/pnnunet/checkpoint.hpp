#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "pnnunet/model.hpp"
#include "pnnunet/volume.hpp"

namespace pnn {

struct CheckpointInfo {
  ModelKind model = ModelKind::Deep;
  std::string phase = "noaug";
  int experiment = 1;
  std::uint32_t seed = 0;
  int epoch = 0;
  double val_dice = 0;
  Index slice_size = kSliceSize;
  ModelShapes shapes;
  /// Weight hashes of the member checkpoints a Transfer model was built from.
  std::map<std::string, std::string> members;
  std::string weights_hash;
};

/// FNV-1a 64 over the little-endian float32 weight blob, as 16 hex digits.
std::string weights_hash(const Model<float>& model);

/// Writes <dir>/<name>.json and <dir>/<name>.bin. Parameters are laid out
/// store by store (ae, deep, wide), names in order, as "deep/enc0.conv1.weight".
void save_checkpoint(const std::filesystem::path& dir, const std::string& name, CheckpointInfo info,
                     const Model<float>& model);

struct LoadedCheckpoint {
  CheckpointInfo info;
  Model<float> model;
};

/// Throws IoError for missing files and FormatError when the manifest and
/// blob disagree with each other or with the recorded network shapes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const std::string& name);

bool checkpoint_exists(const std::filesystem::path& dir, const std::string& name);

}  // namespace pnn
