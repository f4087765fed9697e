#include "abfr/nifti.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"

namespace abfr {

namespace {

constexpr std::size_t kHeaderSize = 348;

class HeaderView {
 public:
  HeaderView(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <class T>
  T get(std::size_t offset) const {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + offset, sizeof(T));
    if (swap_)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

std::size_t bytes_per_voxel(int datatype) {
  switch (datatype) {
    case 2: return 1;
    case 4: return 2;
    case 16: return 4;
    case 64: return 8;
    default: return 0;
  }
}

}  // namespace

NiftiImage parse_nifti(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize)
    throw ParseError("sizeof_hdr", "file shorter than the 348-byte header");

  // Byte order is whatever makes sizeof_hdr read 348.
  std::int32_t raw_size;
  std::memcpy(&raw_size, bytes.data(), 4);
  bool swap;
  if (raw_size == 348)
    swap = false;
  else if (__builtin_bswap32(static_cast<std::uint32_t>(raw_size)) == 348u)
    swap = true;
  else
    throw ParseError("sizeof_hdr", "expected 348 in either byte order");
  const HeaderView h(bytes, swap);

  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  if (std::memcmp(magic, "ni1\0", 4) == 0)
    throw ParseError("magic", "two-file NIfTI (ni1) is not supported");
  if (std::memcmp(magic, "n+1\0", 4) != 0) throw ParseError("magic", "expected \"n+1\"");

  NiftiImage img;
  auto& s = img.header;
  s.byte_swapped = swap;
  s.dim0 = h.get<std::int16_t>(40);
  if (s.dim0 != 3 && s.dim0 != 4)
    throw ParseError("dim[0]", "expected 3 or 4, got " + std::to_string(s.dim0));
  for (int i = 0; i < 4; ++i) {
    if (i < s.dim0) {
      const int d = h.get<std::int16_t>(42 + 2 * i);
      if (d < 1) throw ParseError("dim[" + std::to_string(i + 1) + "]", "extent must be >= 1");
      s.dims[i] = d;
    } else {
      s.dims[i] = 1;
    }
  }

  s.datatype = h.get<std::int16_t>(70);
  const std::size_t bpv = bytes_per_voxel(s.datatype);
  if (bpv == 0) throw ParseError("datatype", "unsupported code " + std::to_string(s.datatype));
  s.bitpix = h.get<std::int16_t>(72);
  if (static_cast<std::size_t>(s.bitpix) != 8 * bpv)
    throw ParseError("bitpix", std::to_string(s.bitpix) + " does not match datatype");

  const float vox_offset = h.get<float>(108);
  if (!(vox_offset >= static_cast<float>(kHeaderSize)) ||
      !(vox_offset <= static_cast<float>(bytes.size())) || vox_offset != std::floor(vox_offset))
    throw ParseError("vox_offset", "outside the file or not an integral byte offset");
  s.vox_offset = vox_offset;
  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);
  s.scl_slope = std::isfinite(slope) ? slope : 0.0;
  s.scl_inter = std::isfinite(inter) ? inter : 0.0;

  const std::size_t nx = s.dims[0], ny = s.dims[1], nz = s.dims[2], nt = s.dims[3];
  const std::size_t nvox = nx * ny * nz * nt;
  const std::size_t offset = static_cast<std::size_t>(vox_offset);
  if (nvox > (bytes.size() - offset) / bpv)
    throw ParseError("payload", "truncated: header declares " + std::to_string(nvox) + " voxels");

  const HeaderView payload(bytes.subspan(offset, nvox * bpv), swap);
  const bool scaled = s.scl_slope != 0.0;
  const std::size_t V = nx * ny * nz;
  std::vector<double> data(nvox);
  // File order is x fastest, then y, z, t.
  std::size_t k = 0;
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x, ++k) {
          double v;
          switch (s.datatype) {
            case 2: v = payload.get<std::uint8_t>(k); break;
            case 4: v = payload.get<std::int16_t>(k * 2); break;
            case 16: v = payload.get<float>(k * 4); break;
            default: v = payload.get<double>(k * 8); break;
          }
          if (scaled) v = v * s.scl_slope + s.scl_inter;
          if (!std::isfinite(v)) throw ParseError("data", "non-finite voxel value");
          data[t * V + (x * ny + y) * nz + z] = v;
        }
  img.volume = Volume4D(nt, {nx, ny, nz}, std::move(data));
  return img;
}

NiftiImage load_nifti(const std::string& path) { return parse_nifti(io::read_file(path)); }

std::string describe(const NiftiSummary& h) {
  std::ostringstream out;
  out << "dim0=" << h.dim0 << " dims=" << h.dims[0] << "x" << h.dims[1] << "x" << h.dims[2];
  if (h.dim0 == 4) out << "x" << h.dims[3];
  out << " datatype=" << h.datatype << " bitpix=" << h.bitpix << " vox_offset=" << h.vox_offset
      << " scl_slope=" << h.scl_slope << " scl_inter=" << h.scl_inter
      << " byte_order=" << (h.byte_swapped ? "swapped" : "native");
  return out.str();
}

}  // namespace abfr
