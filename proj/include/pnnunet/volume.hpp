#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pnnunet/rng.hpp"
#include "pnnunet/tensor.hpp"

namespace pnn {

/// Axial slice of an image: rows follow the coronal axis, columns the
/// sagittal axis.
using Image2D = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Labels2D = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Extents in (X axial, Y coronal, Z sagittal) order.
using Extents3 = std::array<Index, 3>;

/// Real-valued volume stored row-major with X outermost.
struct Volume3D {
  Extents3 extents{0, 0, 0};
  std::vector<double> voxels;
  std::string id;

  Volume3D() = default;
  Volume3D(Extents3 e, std::string name = {});

  Index voxel_count() const { return extents[0] * extents[1] * extents[2]; }
  double& at(Index x, Index y, Index z) { return voxels[index(x, y, z)]; }
  double at(Index x, Index y, Index z) const { return voxels[index(x, y, z)]; }

 private:
  std::size_t index(Index x, Index y, Index z) const {
    return static_cast<std::size_t>((x * extents[1] + y) * extents[2] + z);
  }
};

/// Label volume; labels are 0 background, 1 anterior, 2 posterior.
struct MaskVolume {
  Extents3 extents{0, 0, 0};
  std::vector<int> labels;
  std::string id;

  MaskVolume() = default;
  MaskVolume(Extents3 e, std::string name = {});

  Index voxel_count() const { return extents[0] * extents[1] * extents[2]; }
  int& at(Index x, Index y, Index z) { return labels[index(x, y, z)]; }
  int at(Index x, Index y, Index z) const { return labels[index(x, y, z)]; }

  /// Throws LabelError if any label lies outside {0, 1, 2}.
  void validate() const;

 private:
  std::size_t index(Index x, Index y, Index z) const {
    return static_cast<std::size_t>((x * extents[1] + y) * extents[2] + z);
  }
};

inline constexpr int kLabelCount = 3;
inline constexpr Index kSliceSize = 64;

/// Interprets an integer-valued volume as labels.
MaskVolume to_mask(const Volume3D& volume);

/// Min-max rescale to [0, 1]; a constant volume maps to zeros.
void normalize_min_max(Volume3D& volume);

struct SliceOffsets {
  Index rows = 0;
  Index cols = 0;
  bool operator==(const SliceOffsets&) const = default;
};

template <typename T>
using Slice2D = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct PaddedSlice {
  Slice2D<T> frame;
  SliceOffsets offsets;
};

/// Centers the slice in a zero frame of target x target. Offsets are
/// floor((target - rows) / 2) and floor((target - cols) / 2).
template <typename T>
PaddedSlice<T> pad_slice_to_target(const Slice2D<T>& slice, Index target);

template <typename T>
Slice2D<T> crop_slice(const Slice2D<T>& frame, SliceOffsets offsets, Index rows, Index cols);

SliceOffsets centered_offsets(Index rows, Index cols, Index target);

/// One Y x Z slice per axial index.
std::vector<Image2D> slice_volume(const Volume3D& volume);
std::vector<Labels2D> slice_mask(const MaskVolume& mask);

/// Inverse of slicing: crops each (possibly padded) slice back through the
/// offsets and stacks along X.
Volume3D reassemble(const std::vector<Image2D>& slices, SliceOffsets offsets, Extents3 extents);
MaskVolume reassemble_mask(const std::vector<Labels2D>& slices, SliceOffsets offsets, Extents3 extents);

/// floor(2^32 * k / 60) in exact integer arithmetic, 1 <= k <= 59.
std::uint32_t derive_seed(int experiment);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitCounts&) const = default;
};

/// train = floor(ratio * n), val = floor(ratio * n), test = remainder.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

/// Sorts ids, Fisher-Yates shuffles them with Rng(seed), then partitions by
/// split_counts.
DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed, const SplitRatios& ratios = {});

/// Preprocessed volume cache: cache.json manifest plus cache.bin holding
/// little-endian float32 image voxels followed by mask labels per entry.
struct CacheEntry {
  Volume3D image;
  MaskVolume mask;
};

void write_volume_cache(const std::filesystem::path& dir, const std::vector<CacheEntry>& entries);
std::vector<CacheEntry> read_volume_cache(const std::filesystem::path& dir);

}  // namespace pnn
