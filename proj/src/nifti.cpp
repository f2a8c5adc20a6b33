#include "pnnunet/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pnnunet/errors.hpp"

namespace pnn {

namespace {

constexpr std::size_t kHeaderSize = 348;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    if (offset + sizeof(T) > bytes_.size()) throw FormatError("NIfTI read past end of data");
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

// Swapping is relative to the host; the file's own order is recorded in the
// header separately.
bool host_is_little() { return std::endian::native == std::endian::little; }

std::size_t type_size(NiftiType t) {
  switch (t) {
    case NiftiType::UInt8: return 1;
    case NiftiType::Int16: return 2;
    case NiftiType::Int32: return 4;
    case NiftiType::Float32: return 4;
    case NiftiType::Float64: return 8;
  }
  return 0;
}

}  // namespace

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
  z_stream stream{};
  if (inflateInit2(&stream, 16 + MAX_WBITS) != Z_OK) throw FormatError("cannot initialise gzip decoder");
  stream.next_in = const_cast<Bytef*>(bytes.data());
  stream.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    stream.next_out = chunk.data();
    stream.avail_out = static_cast<uInt>(chunk.size());
    status = inflate(&stream, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      inflateEnd(&stream);
      throw FormatError("corrupt or truncated gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - stream.avail_out));
    if (status == Z_OK && stream.avail_in == 0 && stream.avail_out != 0) {
      inflateEnd(&stream);
      throw FormatError("truncated gzip stream");
    }
  }
  inflateEnd(&stream);
  return out;
}

NiftiImage parse_nifti(std::span<const std::uint8_t> bytes) {
  if (is_gzip(bytes)) {
    const std::vector<std::uint8_t> raw = gunzip(bytes);
    return parse_nifti(raw);
  }
  if (bytes.size() < kHeaderSize) throw FormatError("NIfTI header truncated");

  NiftiImage image;
  NiftiHeader& h = image.header;
  const bool little_file = [&] {
    const auto le = ByteReader(bytes, !host_is_little()).get<std::int16_t>(40);
    if (le >= 1 && le <= 7) return true;
    const auto be = ByteReader(bytes, host_is_little()).get<std::int16_t>(40);
    if (be >= 1 && be <= 7) return false;
    throw FormatError("NIfTI dim[0] outside [1,7] in either byte order");
  }();
  h.big_endian = !little_file;
  const ByteReader r(bytes, little_file != host_is_little());

  if (r.get<std::int32_t>(0) != static_cast<std::int32_t>(kHeaderSize)) throw FormatError("NIfTI sizeof_hdr is not 348");
  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    if (std::memcmp(magic, "ni1\0", 4) == 0) throw FormatError("detached-header NIfTI (ni1) is not supported");
    throw FormatError("bad NIfTI magic");
  }

  h.rank = r.get<std::int16_t>(40);
  if (h.rank > 3) throw UnsupportedError("NIfTI volumes with dim[0] > 3 are not supported");
  for (int i = 0; i < h.rank; ++i) {
    const auto extent = r.get<std::int16_t>(42 + 2 * static_cast<std::size_t>(i));
    if (extent < 1) throw FormatError("NIfTI dimension must be positive");
    h.extents[static_cast<std::size_t>(i)] = extent;
  }

  const auto code = r.get<std::int16_t>(70);
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: h.datatype = static_cast<NiftiType>(code); break;
    default: throw UnsupportedError("unsupported NIfTI datatype " + std::to_string(code));
  }
  h.vox_offset = r.get<float>(108);
  h.scl_slope = r.get<float>(112);
  h.scl_inter = r.get<float>(116);
  if (!std::isfinite(h.vox_offset) || h.vox_offset < static_cast<float>(kHeaderSize))
    throw FormatError("NIfTI vox_offset before end of header");

  const std::size_t start = static_cast<std::size_t>(h.vox_offset);
  const std::size_t width = type_size(h.datatype);
  const Index nx = h.extents[0], ny = h.extents[1], nz = h.extents[2];
  const std::size_t count = static_cast<std::size_t>(nx * ny * nz);
  if (start + count * width > bytes.size()) throw FormatError("NIfTI voxel payload truncated");

  const bool scaled = h.scl_slope != 0 && std::isfinite(h.scl_slope);
  const double slope = scaled ? h.scl_slope : 1.0;
  const double inter = scaled && std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;

  image.volume = Volume3D(h.extents);
  auto raw_value = [&](std::size_t i) -> double {
    const std::size_t at = start + i * width;
    switch (h.datatype) {
      case NiftiType::UInt8: return bytes[at];
      case NiftiType::Int16: return r.get<std::int16_t>(at);
      case NiftiType::Int32: return r.get<std::int32_t>(at);
      case NiftiType::Float32: return r.get<float>(at);
      case NiftiType::Float64: return r.get<double>(at);
    }
    return 0;
  };
  // The file stores x fastest; the volume stores z fastest.
  for (Index z = 0; z < nz; ++z)
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x)
        image.volume.at(x, y, z) = slope * raw_value(static_cast<std::size_t>(x + nx * (y + ny * z))) + inter;
  return image;
}

NiftiImage read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  NiftiImage image = parse_nifti(bytes);
  image.volume.id = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string& name = image.volume.id;
    const std::size_t n = std::strlen(ext);
    if (name.size() > n && name.compare(name.size() - n, n, ext) == 0) {
      image.volume.id = name.substr(0, name.size() - n);
      break;
    }
  }
  return image;
}

}  // namespace pnn
