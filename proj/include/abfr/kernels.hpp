#pragma once

// Data-parallel kernels of the representation pipeline. Each kernel has an
// OpenMP implementation (used by the pipeline) and a plain serial reference
// under kernels::reference kept for tests and benchmarking. Every output
// element is produced by exactly one thread in a fixed order, so results do
// not depend on the thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "abfr/matrix.hpp"
#include "abfr/volume.hpp"

namespace abfr::kernels {

struct FcResult {
  Matrix values;                    // [N x H], entries in [-1, 1]
  std::vector<std::uint8_t> flags;  // 1 where either series had zero variance
  std::size_t degenerate = 0;
};

// Mean series over GM voxels of the cube {|v - c| < s/2}; rows follow `centers`.
// Throws when a patch has no GM voxel.
Matrix patch_series(const Volume4D& volume, const Mask3D& mask, std::span<const Coord> centers,
                    long side);

// Pearson correlation of every patch row against every anchor row.
FcResult fc_matrix(const Matrix& patch_series, const Matrix& anchor_series);

std::vector<double> boundary_distances(const BoundaryField& field, std::span<const Point3> points);

// Number of patches covering each voxel. Patches are given as centre + side.
std::vector<std::uint32_t> coverage_hits(const Dims3& dims, std::span<const Coord> centers,
                                         std::span<const long> sides);

int max_threads();

namespace reference {

Matrix patch_series(const Volume4D& volume, const Mask3D& mask, std::span<const Coord> centers,
                    long side);
FcResult fc_matrix(const Matrix& patch_series, const Matrix& anchor_series);
// Exhaustive scan over every boundary voxel of the mask.
std::vector<double> boundary_distances(const Mask3D& mask, std::span<const Point3> points);
std::vector<std::uint32_t> coverage_hits(const Dims3& dims, std::span<const Coord> centers,
                                         std::span<const long> sides);

}  // namespace reference

}  // namespace abfr::kernels
