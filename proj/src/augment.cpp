#include "pnnunet/augment.hpp"

#include <cmath>

#include "pnnunet/errors.hpp"

namespace pnn {

AugmentPolicy AugmentPolicy::for_split(SplitKind split, Index width) {
  AugmentPolicy p;
  p.split = split;
  if (split == SplitKind::Test) return p;
  p.flip_probability = 0.25;
  if (split == SplitKind::Train) {
    const double scale = static_cast<double>(width) / 28.0;
    p.elastic = ElasticParams{34 * scale, 4 * scale};
  }
  return p;
}

void AugmentPolicy::validate() const {
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw ConfigError("flip probability must lie in [0, 1]");
  if (elastic && !(elastic->alpha >= 0 && elastic->sigma > 0)) throw ConfigError("elastic needs alpha >= 0 and sigma > 0");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

}  // namespace

Image2D gaussian_smooth(const Image2D& field, double sigma) {
  if (!(sigma > 0)) throw ConfigError("sigma must be positive");
  const std::vector<double> k = gaussian_kernel(sigma);
  const Index radius = static_cast<Index>(k.size() / 2), rows = field.rows(), cols = field.cols();
  const auto clamp = [](Index i, Index n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
  Image2D across(rows, cols), out(rows, cols);
  for (Index y = 0; y < rows; ++y)
    for (Index z = 0; z < cols; ++z) {
      double s = 0;
      for (Index j = -radius; j <= radius; ++j) s += k[static_cast<std::size_t>(j + radius)] * field(y, clamp(z + j, cols));
      across(y, z) = s;
    }
  for (Index y = 0; y < rows; ++y)
    for (Index z = 0; z < cols; ++z) {
      double s = 0;
      for (Index i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * across(clamp(y + i, rows), z);
      out(y, z) = s;
    }
  return out;
}

DisplacementField make_displacement(Index rows, Index cols, double alpha, double sigma, Rng& rng) {
  if (!(alpha >= 0) || !(sigma > 0)) throw ConfigError("elastic needs alpha >= 0 and sigma > 0");
  auto noise = [&] {
    Image2D f(rows, cols);
    for (Index i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(-1, 1);
    return f;
  };
  Image2D dy = noise();
  Image2D dz = noise();
  return {gaussian_smooth(dy, sigma) * alpha, gaussian_smooth(dz, sigma) * alpha};
}

SlicePair elastic_deform(const SlicePair& pair, const DisplacementField& field) {
  const Index rows = pair.image.rows(), cols = pair.image.cols();
  if (pair.mask.rows() != rows || pair.mask.cols() != cols || field.dy.rows() != rows || field.dy.cols() != cols ||
      field.dz.rows() != rows || field.dz.cols() != cols)
    throw ShapeError("image, mask and displacement field extents differ");
  const auto pixel = [&](Index y, Index z) {
    return y < 0 || y >= rows || z < 0 || z >= cols ? 0.0 : pair.image(y, z);
  };
  SlicePair out{Image2D(rows, cols), Labels2D(rows, cols)};
  for (Index y = 0; y < rows; ++y)
    for (Index z = 0; z < cols; ++z) {
      const double sy = static_cast<double>(y) + field.dy(y, z), sz = static_cast<double>(z) + field.dz(y, z);
      const double fy = std::floor(sy), fz = std::floor(sz), ty = sy - fy, tz = sz - fz;
      const Index y0 = static_cast<Index>(fy), z0 = static_cast<Index>(fz);
      out.image(y, z) = (1 - ty) * ((1 - tz) * pixel(y0, z0) + tz * pixel(y0, z0 + 1)) +
                        ty * ((1 - tz) * pixel(y0 + 1, z0) + tz * pixel(y0 + 1, z0 + 1));
      const Index ny = static_cast<Index>(std::floor(sy + 0.5)), nz = static_cast<Index>(std::floor(sz + 0.5));
      out.mask(y, z) = ny < 0 || ny >= rows || nz < 0 || nz >= cols ? 0 : pair.mask(ny, nz);
    }
  return out;
}

SlicePair horizontal_flip(const SlicePair& pair) {
  if (pair.image.rows() != pair.mask.rows() || pair.image.cols() != pair.mask.cols())
    throw ShapeError("image and mask extents differ");
  return {pair.image.rowwise().reverse(), pair.mask.rowwise().reverse()};
}

SlicePair apply_policy(const SlicePair& pair, const AugmentPolicy& policy, Rng& rng) {
  return apply_policy(std::vector<SlicePair>{pair}, policy, rng).front();
}

std::vector<SlicePair> apply_policy(const std::vector<SlicePair>& slices, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  if (policy.split == SplitKind::Test) return slices;
  const bool flip = rng.uniform() < policy.flip_probability;
  std::vector<SlicePair> out;
  out.reserve(slices.size());
  for (const SlicePair& s : slices) {
    SlicePair p = s;
    if (policy.elastic)
      p = elastic_deform(p, make_displacement(p.image.rows(), p.image.cols(), policy.elastic->alpha, policy.elastic->sigma, rng));
    out.push_back(flip ? horizontal_flip(p) : std::move(p));
  }
  return out;
}

}  // namespace pnn
