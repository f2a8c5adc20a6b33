#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pnnunet/volume.hpp"

namespace pnn {

/// NIfTI-1 datatype codes accepted by parse_nifti.
enum class NiftiType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

struct NiftiHeader {
  int rank = 0;
  Extents3 extents{1, 1, 1};
  NiftiType datatype = NiftiType::Float32;
  float vox_offset = 352;
  float scl_slope = 0;
  float scl_inter = 0;
  bool big_endian = false;
};

struct NiftiImage {
  NiftiHeader header;
  Volume3D volume;
};

/// Parses a single-file ("n+1") NIfTI-1 image, gzip-compressed or not.
/// Byte order is detected from dim[0]. Scaling is applied when scl_slope is
/// nonzero. Voxels are returned in X, Y, Z order.
NiftiImage parse_nifti(std::span<const std::uint8_t> bytes);

NiftiImage read_nifti(const std::filesystem::path& path);

bool is_gzip(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes);

}  // namespace pnn
