#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abfr/anchors.hpp"
#include "abfr/kernels.hpp"
#include "abfr/matrix.hpp"
#include "abfr/rng.hpp"
#include "abfr/volume.hpp"

namespace abfr {

// Half-width of a centred patch: voxels with |v - p| < s/2 per axis, i.e.
// offsets in [-r, r] with r = ceil(s/2) - 1.
long patch_radius(long side);

// Voxels of the centred cube around `center`, clipped to the grid.
std::vector<Coord> patch_voxels(const Dims3& dims, Coord center, long side);

// Mean of volume over a voxel set, one value per timepoint.
std::vector<double> mean_time_series(const Volume4D& volume, std::span<const Coord> voxels);

// [H x T]: mean over GM voxels labelled j for every anchor j.
Matrix anchor_series(const Volume4D& volume, const Mask3D& mask, const AnchorSet& anchors);

std::vector<double> patch_series(const Volume4D& volume, const Mask3D& mask, Coord center,
                                 long side);

struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

// Pearson correlation clamped to [-1, 1]; zero-variance input gives 0 with the
// degeneracy flag set.
Correlation pearson(std::span<const double> u, std::span<const double> v);

struct SampledPatch {
  Coord center;
  long side = 0;
  std::vector<double> series;
  Point3 pos;  // centre / dims, in [0, 1]^3
};

struct SamplingOptions {
  std::size_t count = 256;
  long side = 8;
  std::uint64_t tau = 1;
  // 0 means 1000 * count.
  std::uint64_t max_attempts = 0;
};

// Centres drawn uniformly from the grid, accepted when the patch holds at least
// tau GM voxels.
std::vector<Coord> sample_patch_centers(const Mask3D& mask, const SamplingOptions& options,
                                        Rng& rng);
std::vector<SampledPatch> sample_patches(const Volume4D& volume, const Mask3D& mask,
                                         const SamplingOptions& options, Rng& rng);

Point3 normalized_position(const Dims3& dims, Coord center);

struct SubjectRepresentation {
  Matrix fc;         // [N x H], mean over iterations
  Matrix positions;  // [N x 3R]
  std::optional<int> label;
  std::string subject_id;
  std::uint64_t seed = 0;
  std::vector<long> sizes;

  std::size_t patches() const { return fc.rows; }
  std::size_t anchors() const { return fc.cols; }
  std::size_t iterations() const { return positions.cols / 3; }
};

struct IterationResult {
  long side = 0;
  std::vector<Coord> centers;
  kernels::FcResult fc;
};

struct IterativeResult {
  SubjectRepresentation rep;
  std::vector<IterationResult> iterations;
};

struct IterativeOptions {
  std::vector<long> sizes{8, 12, 16};
  std::size_t count = 256;
  std::uint64_t tau = 1;
};

// R = sizes.size() independent samplings drawn from one rng stream. Rows of
// the per-iteration FC matrices are paired by sampling index.
IterativeResult iterative_representation(const Volume4D& volume, const Mask3D& mask,
                                         const Matrix& anchor_series,
                                         const IterativeOptions& options, Rng& rng);

// Elementwise mean of equally sized matrices.
Matrix average_matrices(std::span<const Matrix> matrices);

// Mean over cells of the across-matrix sample variance (cells matched by index).
double across_repeat_variance(std::span<const Matrix> matrices);

struct CoverageResult {
  double percent = 0.0;
  std::vector<std::uint32_t> hits;  // per voxel, all voxels
};

struct PatchSet {
  std::vector<Coord> centers;
  long side = 0;
};

CoverageResult gm_coverage(std::span<const PatchSet> sets, const Mask3D& mask);

// Runs the R-iteration representation `repeats` times with fresh draws and
// reports the mean per-cell variance of the averaged FC matrix.
double fc_sampling_variance(const Volume4D& volume, const Mask3D& mask,
                            const Matrix& anchor_series, const IterativeOptions& options,
                            std::size_t repeats, Rng& rng);

// "ABFR" file: magic, u32 version, u32 N, u32 H, u32 R, f64 fc, f64 positions,
// u8 label presence, u8 label.
std::vector<std::uint8_t> encode_representation(const SubjectRepresentation& rep);
SubjectRepresentation decode_representation(std::span<const std::uint8_t> bytes);
void save_representation(const SubjectRepresentation& rep, const std::string& path);
SubjectRepresentation load_representation(const std::string& path);

}  // namespace abfr
