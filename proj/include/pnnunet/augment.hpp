#pragma once

#include <optional>
#include <vector>

#include "pnnunet/rng.hpp"
#include "pnnunet/volume.hpp"

namespace pnn {

enum class SplitKind { Train, Val, Test };

struct ElasticParams {
  double alpha = 34;
  double sigma = 4;
};

struct AugmentPolicy {
  double flip_probability = 0;
  std::optional<ElasticParams> elastic;
  SplitKind split = SplitKind::Test;

  /// Train: flips with p = 0.25 plus elastic with alpha = 34 W/28 and
  /// sigma = 4 W/28 for slice width W. Val: flips only. Test: identity.
  static AugmentPolicy for_split(SplitKind split, Index width = kSliceSize);

  void validate() const;
};

/// Per-pixel displacement along rows (dy) and columns (dz).
struct DisplacementField {
  Image2D dy;
  Image2D dz;
};

/// Separable convolution with a normalized Gaussian truncated at radius
/// ceil(3 sigma); borders are edge-clamped.
Image2D gaussian_smooth(const Image2D& field, double sigma);

/// Uniform(-1, 1) noise for dy then dz, each smoothed and scaled by alpha.
DisplacementField make_displacement(Index rows, Index cols, double alpha, double sigma, Rng& rng);

struct SlicePair {
  Image2D image;
  Labels2D mask;
};

/// Samples the image bilinearly and the mask by nearest neighbour at
/// (y + dy, z + dz), filling zero outside the slice.
SlicePair elastic_deform(const SlicePair& pair, const DisplacementField& field);

/// Reverses the column axis of both arrays.
SlicePair horizontal_flip(const SlicePair& pair);

/// Draws one uniform for the flip decision, then (Train) a fresh field.
/// Elastic is applied before the flip.
SlicePair apply_policy(const SlicePair& pair, const AugmentPolicy& policy, Rng& rng);

/// Volume-level variant: one flip decision for the whole volume, a fresh
/// displacement field per slice.
std::vector<SlicePair> apply_policy(const std::vector<SlicePair>& slices, const AugmentPolicy& policy, Rng& rng);

}  // namespace pnn
