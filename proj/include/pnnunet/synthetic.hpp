#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnnunet/augment.hpp"
#include "pnnunet/volume.hpp"

namespace pnn {

/// Hippocampus-like stand-in data: an ellipsoid split along the coronal axis
/// into an anterior (label 1) and posterior (label 2) part, brighter than a
/// noisy background. Images are min-max normalized.
CacheEntry make_synthetic_volume(Extents3 extents, const std::string& id, Rng& rng);

/// `count` volumes with extents jittered around `typical`, ids synth_000...
std::vector<CacheEntry> make_synthetic_dataset(std::size_t count, Extents3 typical, std::uint64_t seed);

/// 2D analogue on size x size frames.
std::vector<SlicePair> make_synthetic_slices(std::size_t count, Index size, std::uint64_t seed);

}  // namespace pnn
