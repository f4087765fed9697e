#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abfr/rng.hpp"
#include "abfr/volume.hpp"

namespace abfr {

// Cube [t, t + side) along every axis, clipped to the grid.
struct PatchSpec {
  Coord top_left;
  long side = 0;
  bool operator==(const PatchSpec&) const = default;
};

// 3D summed-area table over a mask: O(1) GM voxel counts for any box.
class SupportTable {
 public:
  explicit SupportTable(const Mask3D& mask);
  // GM voxels in the inclusive box [lo, hi], clipped to the grid.
  std::uint64_t box(Coord lo, Coord hi) const;
  const Dims3& dims() const { return dims_; }

 private:
  std::uint64_t at(long x, long y, long z) const;
  Dims3 dims_;
  std::vector<std::uint64_t> sums_;  // (X+1)(Y+1)(Z+1)
};

// G(t): GM voxels inside the (clipped) patch.
std::uint64_t gm_support(const Mask3D& mask, const PatchSpec& patch);
std::uint64_t gm_support(const SupportTable& table, const PatchSpec& patch);

// Real-valued geometric centre t + s/2 on every axis.
Point3 patch_center(const PatchSpec& patch);

struct AnchorSet {
  std::string mode;  // "random" or "grid"
  std::vector<PatchSpec> anchors;
  long side = 0;
  std::uint64_t tau = 0;
  std::uint64_t seed = 0;
  Dims3 dims;
  // Anchor id (1-based) per voxel, 0 for background.
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return anchors.size(); }
};

struct RandomAnchorOptions {
  std::size_t count = 100;
  long side = 8;
  std::uint64_t tau = 100;
  // 0 means 1000 * count.
  std::uint64_t max_attempts = 0;
};

// Rejection sampling of top-left corners from [0, X-s] x [0, Y-s] x [0, Z-s].
// Labels are not built; call build_label_image afterwards.
AnchorSet select_random_anchors(const Mask3D& mask, const RandomAnchorOptions& options, Rng& rng,
                                std::uint64_t* attempts_out = nullptr);

struct GridAnchorOptions {
  // Inclusive bounds per axis.
  Coord roi_min;
  Coord roi_max;
  std::array<long, 3> stride{8, 8, 8};
  long side = 8;
  std::uint64_t tau = 100;
};

struct GridDiagnostics {
  std::size_t candidates = 0;
  std::size_t dropped_support = 0;
  std::size_t dropped_bounds = 0;
  std::array<long, 3> offsets{};
};

// Default grid ROI: the bounding box of the GM mask.
GridAnchorOptions default_grid_options(const Mask3D& mask, long side, std::uint64_t tau);

AnchorSet select_grid_anchors(const Mask3D& mask, const GridAnchorOptions& options,
                              GridDiagnostics* diagnostics = nullptr);

// Lowest-index anchor wins where cubes overlap. Throws when any anchor is left
// without a GM voxel carrying its label.
void build_label_image(AnchorSet& anchors, const Mask3D& mask);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

struct BoundaryReport {
  std::vector<double> distances;
  std::vector<HistogramBin> histogram;
  double mean = 0.0;
};

BoundaryReport boundary_distance_report(const AnchorSet& anchors, const Mask3D& mask,
                                        double bin_width = 0.5);

std::vector<HistogramBin> histogram(std::span<const double> values, double bin_width);

// Persistence: JSON description plus an "ABFL" u16 label sidecar.
std::string anchors_to_json(const AnchorSet& anchors, const std::string& label_file);
void save_anchor_set(const AnchorSet& anchors, const std::string& json_path,
                     const std::string& label_path);
AnchorSet load_anchor_set(const std::string& json_path);

std::vector<std::uint8_t> encode_labels(const Dims3& dims, std::span<const std::uint16_t> labels);
std::vector<std::uint16_t> decode_labels(std::span<const std::uint8_t> bytes, Dims3* dims);

}  // namespace abfr
