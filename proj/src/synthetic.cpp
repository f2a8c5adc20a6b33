#include "pnnunet/synthetic.hpp"

#include <algorithm>
#include <cstdio>

namespace pnn {

namespace {

constexpr double kBackground = 0.15, kAnterior = 0.8, kPosterior = 0.5, kNoise = 0.08;

double intensity(int label, Rng& rng) {
  const double base = label == 1 ? kAnterior : (label == 2 ? kPosterior : kBackground);
  return base + rng.uniform(-kNoise, kNoise);
}

}  // namespace

CacheEntry make_synthetic_volume(Extents3 e, const std::string& id, Rng& rng) {
  CacheEntry out{Volume3D(e, id), MaskVolume(e, id)};
  double c[3], r[3];
  for (int a = 0; a < 3; ++a) {
    const double n = static_cast<double>(e[static_cast<std::size_t>(a)]);
    r[a] = n * rng.uniform(0.2, 0.35);
    c[a] = n / 2 + rng.uniform(-0.1, 0.1) * n;
  }
  for (Index x = 0; x < e[0]; ++x)
    for (Index y = 0; y < e[1]; ++y)
      for (Index z = 0; z < e[2]; ++z) {
        const double dx = (static_cast<double>(x) - c[0]) / r[0], dy = (static_cast<double>(y) - c[1]) / r[1],
                     dz = (static_cast<double>(z) - c[2]) / r[2];
        const int label = dx * dx + dy * dy + dz * dz <= 1 ? (dy < 0 ? 1 : 2) : 0;
        out.mask.at(x, y, z) = label;
        out.image.at(x, y, z) = intensity(label, rng);
      }
  normalize_min_max(out.image);
  return out;
}

std::vector<CacheEntry> make_synthetic_dataset(std::size_t count, Extents3 typical, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CacheEntry> out;
  for (std::size_t i = 0; i < count; ++i) {
    Extents3 e;
    for (std::size_t a = 0; a < 3; ++a) {
      const Index jitter = std::max<Index>(1, typical[a] / 8);
      e[a] = std::max<Index>(2, typical[a] - jitter + static_cast<Index>(rng.below(static_cast<std::uint64_t>(2 * jitter + 1))));
      if (a > 0) e[a] = std::min(e[a], kSliceSize);
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03zu", i);
    out.push_back(make_synthetic_volume(e, id, rng));
  }
  return out;
}

std::vector<SlicePair> make_synthetic_slices(std::size_t count, Index size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SlicePair> out;
  for (std::size_t i = 0; i < count; ++i) {
    SlicePair p{Image2D(size, size), Labels2D(size, size)};
    const double n = static_cast<double>(size);
    const double cy = n / 2 + rng.uniform(-0.15, 0.15) * n, cz = n / 2 + rng.uniform(-0.15, 0.15) * n;
    const double ry = n * rng.uniform(0.15, 0.3), rz = n * rng.uniform(0.15, 0.3);
    for (Index y = 0; y < size; ++y)
      for (Index z = 0; z < size; ++z) {
        const double dy = (static_cast<double>(y) - cy) / ry, dz = (static_cast<double>(z) - cz) / rz;
        const int label = dy * dy + dz * dz <= 1 ? (dy < 0 ? 1 : 2) : 0;
        p.mask(y, z) = label;
        p.image(y, z) = intensity(label, rng);
      }
    const double lo = p.image.minCoeff(), hi = p.image.maxCoeff();
    p.image = (p.image - lo) / (hi - lo);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pnn
