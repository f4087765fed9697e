#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "abfr/volume.hpp"

namespace abfr {

// Header fields of a single-file NIfTI-1 image that the reader honours.
struct NiftiSummary {
  int dim0 = 0;
  std::array<int, 4> dims{};  // x, y, z, t (t = 1 for 3D images)
  int datatype = 0;
  int bitpix = 0;
  double vox_offset = 0.0;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  bool byte_swapped = false;
};

struct NiftiImage {
  NiftiSummary header;
  // 3D images load as a single-timepoint volume.
  Volume4D volume;

  bool is_3d() const { return header.dim0 == 3; }
  Mask3D as_mask() const { return volume_to_mask(volume); }
};

// Uncompressed ".nii" with datatype u8 (2), i16 (4), f32 (16) or f64 (64).
// Errors are ParseError naming the offending header field.
NiftiImage parse_nifti(std::span<const std::uint8_t> bytes);
NiftiImage load_nifti(const std::string& path);

std::string describe(const NiftiSummary& header);

}  // namespace abfr
