#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abfr/matrix.hpp"

namespace abfr {

struct Dims3 {
  std::size_t x = 0, y = 0, z = 0;
  std::size_t count() const { return x * y * z; }
  bool operator==(const Dims3&) const = default;
};

// Integer voxel index (x, y, z).
struct Coord {
  long x = 0, y = 0, z = 0;
  bool operator==(const Coord&) const = default;
};

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline bool inside(const Dims3& d, long x, long y, long z) {
  return x >= 0 && y >= 0 && z >= 0 && static_cast<std::size_t>(x) < d.x &&
         static_cast<std::size_t>(y) < d.y && static_cast<std::size_t>(z) < d.z;
}

// BOLD recording, row-major in (t, x, y, z).
class Volume4D {
 public:
  Volume4D() = default;
  Volume4D(std::size_t t, Dims3 spatial, std::vector<double> data);

  std::size_t timepoints() const { return t_; }
  const Dims3& spatial() const { return dims_; }
  std::size_t voxel_count() const { return dims_.count(); }
  std::span<const double> data() const { return data_; }

  std::size_t voxel_index(long x, long y, long z) const {
    return (static_cast<std::size_t>(x) * dims_.y + static_cast<std::size_t>(y)) * dims_.z +
           static_cast<std::size_t>(z);
  }
  double at(std::size_t t, std::size_t voxel) const { return data_[t * dims_.count() + voxel]; }
  double at(std::size_t t, long x, long y, long z) const { return at(t, voxel_index(x, y, z)); }
  std::vector<double> series(std::size_t voxel) const;

  bool operator==(const Volume4D&) const = default;

 private:
  std::size_t t_ = 0;
  Dims3 dims_;
  std::vector<double> data_;
};

// Grey-matter mask, one byte per voxel (0 or 1), indexed like Volume4D's voxels.
class Mask3D {
 public:
  Mask3D() = default;
  explicit Mask3D(Dims3 dims) : dims_(dims), bits_(dims.count(), 0) {}
  Mask3D(Dims3 dims, std::vector<std::uint8_t> bits);

  const Dims3& dims() const { return dims_; }
  std::size_t index(long x, long y, long z) const {
    return (static_cast<std::size_t>(x) * dims_.y + static_cast<std::size_t>(y)) * dims_.z +
           static_cast<std::size_t>(z);
  }
  bool at(long x, long y, long z) const { return bits_[index(x, y, z)] != 0; }
  bool at_safe(long x, long y, long z) const { return inside(dims_, x, y, z) && at(x, y, z); }
  void set(long x, long y, long z, bool on) { bits_[index(x, y, z)] = on ? 1 : 0; }
  bool at(std::size_t i) const { return bits_[i] != 0; }
  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool operator==(const Mask3D&) const = default;

 private:
  Dims3 dims_;
  std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// Raw "ABFV" persistence: magic, u32 version, u64 dims (T, X, Y, Z), f64 data.

std::vector<std::uint8_t> encode_raw(const Volume4D& volume);
Volume4D decode_raw(std::span<const std::uint8_t> bytes);
void save_raw(const Volume4D& volume, const std::string& path);
Volume4D load_raw(const std::string& path);

// Masks travel as single-timepoint ABFV volumes of 0/1.
Volume4D mask_to_volume(const Mask3D& mask);
Mask3D volume_to_mask(const Volume4D& volume);

// ---------------------------------------------------------------------------
// Grey-matter boundary geometry. A boundary voxel is a GM voxel with at least
// one face neighbour outside GM (voxels past the grid edge count as outside).

bool is_boundary_voxel(const Mask3D& mask, long x, long y, long z);

class BoundaryField {
 public:
  explicit BoundaryField(const Mask3D& mask);

  // Euclidean distance (voxel units) from `p` to the nearest boundary voxel.
  double distance(const Point3& p) const;
  std::size_t boundary_count() const { return count_; }
  bool boundary(long x, long y, long z) const { return bits_[mask_dims_index(x, y, z)] != 0; }

 private:
  std::size_t mask_dims_index(long x, long y, long z) const {
    return (static_cast<std::size_t>(x) * dims_.y + static_cast<std::size_t>(y)) * dims_.z +
           static_cast<std::size_t>(z);
  }
  Dims3 dims_;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

double gm_boundary_distance(const Mask3D& mask, const Point3& point);

// ---------------------------------------------------------------------------
// Synthetic phantom: an ellipsoidal GM shell split into contiguous functional
// communities that share latent time courses.

struct PhantomSpec {
  Dims3 dims{32, 32, 32};
  std::array<double, 3> outer_radii{14.0, 14.0, 14.0};
  double thickness = 4.0;
  std::size_t timepoints = 96;
  std::size_t n_regions = 6;
  double class_effect = 0.8;
  double noise_sigma = 1.0;
  // Standard deviation of the white-noise term inside each latent.
  double latent_noise = 0.5;
  // For class 1 the second region of each pair is mixed toward the first.
  std::vector<std::pair<std::size_t, std::size_t>> planted_pairs{{0, 1}, {2, 3}};
  std::uint64_t seed = 0;
};

struct Phantom {
  Volume4D volume;
  Mask3D mask;
  int label = 0;
  // Community id per voxel, -1 outside GM.
  std::vector<int> regions;
  // Latent time course per community, [n_regions x T].
  Matrix latents;
};

void validate(const PhantomSpec& spec);
Mask3D phantom_mask(const PhantomSpec& spec);
std::vector<int> phantom_regions(const PhantomSpec& spec, const Mask3D& mask);
Phantom make_phantom(const PhantomSpec& spec, int label);

}  // namespace abfr
