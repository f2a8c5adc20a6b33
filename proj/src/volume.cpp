#include "pnnunet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "pnnunet/errors.hpp"

namespace pnn {

namespace {

void check_extents(const Extents3& e) {
  for (Index n : e)
    if (n < 1) throw ShapeError("volume extents must be positive");
}

std::string extents_string(const Extents3& e) {
  return "(" + std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) + ")";
}

}  // namespace

Volume3D::Volume3D(Extents3 e, std::string name) : extents(e), id(std::move(name)) {
  check_extents(e);
  voxels.assign(static_cast<std::size_t>(voxel_count()), 0.0);
}

MaskVolume::MaskVolume(Extents3 e, std::string name) : extents(e), id(std::move(name)) {
  check_extents(e);
  labels.assign(static_cast<std::size_t>(voxel_count()), 0);
}

void MaskVolume::validate() const {
  if (static_cast<Index>(labels.size()) != voxel_count()) throw ShapeError("mask label count does not match extents");
  for (int l : labels)
    if (l < 0 || l >= kLabelCount) throw LabelError("mask label " + std::to_string(l) + " outside {0,1,2}");
}

MaskVolume to_mask(const Volume3D& volume) {
  MaskVolume mask(volume.extents, volume.id);
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    const double v = volume.voxels[i];
    const double r = std::round(v);
    if (!std::isfinite(v) || std::abs(v - r) > 1e-6) throw LabelError("mask voxel is not an integer label");
    mask.labels[i] = static_cast<int>(r);
  }
  mask.validate();
  return mask;
}

void normalize_min_max(Volume3D& volume) {
  if (volume.voxels.empty()) return;
  const auto [lo, hi] = std::minmax_element(volume.voxels.begin(), volume.voxels.end());
  const double min = *lo, range = *hi - *lo;
  if (!std::isfinite(range)) throw NumericError("volume contains non-finite voxels");
  for (double& v : volume.voxels) v = range > 0 ? (v - min) / range : 0.0;
}

SliceOffsets centered_offsets(Index rows, Index cols, Index target) {
  if (rows > target || cols > target)
    throw SizeError("slice " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds target " +
                    std::to_string(target));
  return {(target - rows) / 2, (target - cols) / 2};
}

template <typename T>
PaddedSlice<T> pad_slice_to_target(const Slice2D<T>& slice, Index target) {
  PaddedSlice<T> out;
  out.offsets = centered_offsets(slice.rows(), slice.cols(), target);
  out.frame = Slice2D<T>::Zero(target, target);
  out.frame.block(out.offsets.rows, out.offsets.cols, slice.rows(), slice.cols()) = slice;
  return out;
}

template <typename T>
Slice2D<T> crop_slice(const Slice2D<T>& frame, SliceOffsets offsets, Index rows, Index cols) {
  if (offsets.rows < 0 || offsets.cols < 0 || offsets.rows + rows > frame.rows() || offsets.cols + cols > frame.cols())
    throw ShapeError("crop window falls outside the frame");
  return frame.block(offsets.rows, offsets.cols, rows, cols);
}

template PaddedSlice<double> pad_slice_to_target<double>(const Slice2D<double>&, Index);
template PaddedSlice<int> pad_slice_to_target<int>(const Slice2D<int>&, Index);
template PaddedSlice<float> pad_slice_to_target<float>(const Slice2D<float>&, Index);
template Slice2D<double> crop_slice<double>(const Slice2D<double>&, SliceOffsets, Index, Index);
template Slice2D<int> crop_slice<int>(const Slice2D<int>&, SliceOffsets, Index, Index);
template Slice2D<float> crop_slice<float>(const Slice2D<float>&, SliceOffsets, Index, Index);

namespace {

template <typename T, typename V>
std::vector<Slice2D<T>> slice_any(const V& vol, const std::vector<T>& data) {
  const Index ny = vol.extents[1], nz = vol.extents[2], plane = ny * nz;
  std::vector<Slice2D<T>> slices;
  slices.reserve(static_cast<std::size_t>(vol.extents[0]));
  for (Index x = 0; x < vol.extents[0]; ++x)
    slices.push_back(Eigen::Map<const Slice2D<T>>(data.data() + x * plane, ny, nz));
  return slices;
}

template <typename T>
void reassemble_into(const std::vector<Slice2D<T>>& slices, SliceOffsets offsets, Extents3 extents, std::vector<T>& out) {
  if (static_cast<Index>(slices.size()) != extents[0])
    throw ShapeError("reassembly got " + std::to_string(slices.size()) + " slices for extents " + extents_string(extents));
  const Index ny = extents[1], nz = extents[2], plane = ny * nz;
  for (Index x = 0; x < extents[0]; ++x) {
    const auto& s = slices[static_cast<std::size_t>(x)];
    Eigen::Map<Slice2D<T>>(out.data() + x * plane, ny, nz) = crop_slice<T>(s, offsets, ny, nz);
  }
}

}  // namespace

std::vector<Image2D> slice_volume(const Volume3D& volume) { return slice_any<double>(volume, volume.voxels); }

std::vector<Labels2D> slice_mask(const MaskVolume& mask) { return slice_any<int>(mask, mask.labels); }

Volume3D reassemble(const std::vector<Image2D>& slices, SliceOffsets offsets, Extents3 extents) {
  Volume3D v(extents);
  reassemble_into<double>(slices, offsets, extents, v.voxels);
  return v;
}

MaskVolume reassemble_mask(const std::vector<Labels2D>& slices, SliceOffsets offsets, Extents3 extents) {
  MaskVolume m(extents);
  reassemble_into<int>(slices, offsets, extents, m.labels);
  return m;
}

std::uint32_t derive_seed(int experiment) {
  if (experiment < 1 || experiment > 59) throw ConfigError("experiment number must lie in [1, 59]");
  return static_cast<std::uint32_t>((std::uint64_t{1} << 32) * static_cast<std::uint64_t>(experiment) / 60);
}

SplitCounts split_counts(std::size_t n, const SplitRatios& r) {
  for (double v : {r.train, r.val, r.test})
    if (!(v >= 0) || v > 1) throw ConfigError("split ratios must lie in [0, 1]");
  if (std::abs(r.train + r.val + r.test - 1) > 1e-9) throw ConfigError("split ratios must sum to 1");
  // The epsilon keeps products such as 0.7 * 90 (62.999...) from flooring one short.
  const auto floor_count = [n](double ratio) {
    return std::min(n, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
  };
  SplitCounts c;
  c.train = floor_count(r.train);
  c.val = std::min(n - c.train, floor_count(r.val));
  c.test = n - c.train - c.val;
  return c;
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed, const SplitRatios& ratios) {
  if (ids.empty()) throw ConfigError("cannot split an empty dataset");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  const SplitCounts c = split_counts(ids.size(), ratios);
  DatasetSplit s;
  const auto b = ids.begin();
  s.train.assign(b, b + static_cast<std::ptrdiff_t>(c.train));
  s.val.assign(b + static_cast<std::ptrdiff_t>(c.train), b + static_cast<std::ptrdiff_t>(c.train + c.val));
  s.test.assign(b + static_cast<std::ptrdiff_t>(c.train + c.val), ids.end());
  return s;
}

namespace {

constexpr const char* kManifest = "cache.json";
constexpr const char* kBlob = "cache.bin";

void put_f32(std::ofstream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float get_f32(const std::vector<unsigned char>& blob, std::size_t at) {
  const std::uint32_t bits = std::uint32_t{blob[at]} | std::uint32_t{blob[at + 1]} << 8 |
                             std::uint32_t{blob[at + 2]} << 16 | std::uint32_t{blob[at + 3]} << 24;
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_volume_cache(const std::filesystem::path& dir, const std::vector<CacheEntry>& entries) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream blob(dir / kBlob, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + (dir / kBlob).string());
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (e.image.extents != e.mask.extents) throw ShapeError("image and mask extents differ for " + e.image.id);
    e.mask.validate();
    const std::uint64_t n = static_cast<std::uint64_t>(e.image.voxel_count());
    manifest.push_back({{"id", e.image.id},
                        {"extents", e.image.extents},
                        {"dtype", "f32"},
                        {"offsets", {{"image", offset}, {"mask", offset + 4 * n}}}});
    for (double v : e.image.voxels) put_f32(blob, static_cast<float>(v));
    for (int l : e.mask.labels) put_f32(blob, static_cast<float>(l));
    offset += 8 * n;
  }
  if (!blob) throw IoError("failed writing " + (dir / kBlob).string());
  std::ofstream json(dir / kManifest, std::ios::trunc);
  if (!json) throw IoError("cannot write " + (dir / kManifest).string());
  json << manifest.dump(2) << '\n';
}

std::vector<CacheEntry> read_volume_cache(const std::filesystem::path& dir) {
  std::ifstream json(dir / kManifest);
  if (!json) throw IoError("cannot open " + (dir / kManifest).string());
  std::ifstream in(dir / kBlob, std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / kBlob).string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::vector<CacheEntry> entries;
  try {
    const nlohmann::json manifest = nlohmann::json::parse(json);
    for (const auto& item : manifest) {
      if (item.at("dtype") != "f32") throw FormatError("unsupported cache dtype");
      const Extents3 extents = item.at("extents").get<Extents3>();
      CacheEntry e{Volume3D(extents, item.at("id")), MaskVolume(extents, item.at("id"))};
      const std::size_t n = static_cast<std::size_t>(e.image.voxel_count());
      const std::size_t image_at = item.at("offsets").at("image"), mask_at = item.at("offsets").at("mask");
      if (image_at + 4 * n > blob.size() || mask_at + 4 * n > blob.size()) throw FormatError("volume cache blob truncated");
      for (std::size_t i = 0; i < n; ++i) {
        e.image.voxels[i] = get_f32(blob, image_at + 4 * i);
        e.mask.labels[i] = static_cast<int>(get_f32(blob, mask_at + 4 * i));
      }
      e.mask.validate();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& err) {
    throw FormatError(std::string("bad volume cache manifest: ") + err.what());
  }
  return entries;
}

}  // namespace pnn
