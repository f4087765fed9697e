#include "abfr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "abfr/error.hpp"
#include "abfr/sampling.hpp"

namespace abfr::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

// Flat GM voxel indices of the centred cube around c.
void gm_voxels(const Mask3D& mask, Coord c, long r, std::vector<std::size_t>& out) {
  out.clear();
  const auto& d = mask.dims();
  const long x0 = std::max(0L, c.x - r), x1 = std::min<long>(d.x - 1, c.x + r);
  const long y0 = std::max(0L, c.y - r), y1 = std::min<long>(d.y - 1, c.y + r);
  const long z0 = std::max(0L, c.z - r), z1 = std::min<long>(d.z - 1, c.z + r);
  for (long x = x0; x <= x1; ++x)
    for (long y = y0; y <= y1; ++y)
      for (long z = z0; z <= z1; ++z)
        if (mask.at(x, y, z)) out.push_back(mask.index(x, y, z));
}

// Centres and scales a row to unit norm; returns false for zero variance.
bool standardize(std::span<const double> in, std::span<double> out) {
  const std::size_t n = in.size();
  double mu = 0.0, peak = 0.0;
  for (double v : in) {
    mu += v;
    peak = std::max(peak, std::abs(v));
  }
  mu /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    out[t] = in[t] - mu;
    ss += out[t] * out[t];
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd <= 1e-12 * std::max(1.0, peak)) {
    std::fill(out.begin(), out.end(), 0.0);
    return false;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& v : out) v *= inv;
  return true;
}

}  // namespace

Matrix patch_series(const Volume4D& volume, const Mask3D& mask, std::span<const Coord> centers,
                    long side) {
  const std::size_t T = volume.timepoints(), V = volume.voxel_count();
  const long r = patch_radius(side);
  Matrix out(centers.size(), T);
  const auto data = volume.data();
  const long n = static_cast<long>(centers.size());
  bool empty = false;
#pragma omp parallel
  {
    std::vector<std::size_t> voxels;
#pragma omp for schedule(dynamic, 8)
    for (long i = 0; i < n; ++i) {
      gm_voxels(mask, centers[i], r, voxels);
      if (voxels.empty()) {
#pragma omp atomic write
        empty = true;
        continue;
      }
      const double count = static_cast<double>(voxels.size());
      for (std::size_t t = 0; t < T; ++t) {
        const double* frame = data.data() + t * V;
        double s = 0.0;
        for (auto v : voxels) s += frame[v];
        out(static_cast<std::size_t>(i), t) = s / count;
      }
    }
  }
  if (empty) throw ContractError("patch series: a patch holds no GM voxel");
  return out;
}

FcResult fc_matrix(const Matrix& ps, const Matrix& as) {
  if (ps.cols != as.cols)
    throw DimensionError("fc_matrix: patch and anchor series lengths differ");
  if (ps.cols < 2) throw ContractError("fc_matrix: need at least 2 timepoints");
  const std::size_t N = ps.rows, H = as.rows, T = ps.cols;
  Matrix zp(N, T), za(H, T);
  std::vector<std::uint8_t> okp(N), oka(H);
  const long ln = static_cast<long>(N), lh = static_cast<long>(H);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < ln; ++i) okp[i] = standardize(ps.row(i), zp.row(i));
#pragma omp parallel for schedule(static)
  for (long j = 0; j < lh; ++j) oka[j] = standardize(as.row(j), za.row(j));

  FcResult r;
  r.values = Matrix(N, H);
  r.flags.assign(N * H, 0);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < ln; ++i) {
    const double* u = zp.data.data() + i * T;
    for (std::size_t j = 0; j < H; ++j) {
      if (!okp[i] || !oka[j]) {
        r.flags[i * H + j] = 1;
        continue;
      }
      const double* a = za.data.data() + j * T;
      double dot = 0.0;
      for (std::size_t t = 0; t < T; ++t) dot += u[t] * a[t];
      r.values(i, j) = std::clamp(dot, -1.0, 1.0);
    }
  }
  r.degenerate = static_cast<std::size_t>(std::count(r.flags.begin(), r.flags.end(), 1));
  return r;
}

std::vector<double> boundary_distances(const BoundaryField& field, std::span<const Point3> points) {
  std::vector<double> out(points.size());
  const long n = static_cast<long>(points.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n; ++i) out[i] = field.distance(points[i]);
  return out;
}

std::vector<std::uint32_t> coverage_hits(const Dims3& dims, std::span<const Coord> centers,
                                         std::span<const long> sides) {
  if (centers.size() != sides.size()) throw DimensionError("coverage: centers/sides mismatch");
  std::vector<std::uint32_t> hits(dims.count(), 0);
  // Each thread owns whole x-slabs, so no two threads touch the same voxel.
  const long X = static_cast<long>(dims.x), Y = static_cast<long>(dims.y),
             Z = static_cast<long>(dims.z);
#pragma omp parallel for schedule(static)
  for (long x = 0; x < X; ++x) {
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const long r = patch_radius(sides[k]);
      const auto& c = centers[k];
      if (x < c.x - r || x > c.x + r) continue;
      const long y0 = std::max(0L, c.y - r), y1 = std::min(Y - 1, c.y + r);
      const long z0 = std::max(0L, c.z - r), z1 = std::min(Z - 1, c.z + r);
      for (long y = y0; y <= y1; ++y)
        for (long z = z0; z <= z1; ++z) ++hits[(static_cast<std::size_t>(x) * dims.y + y) * dims.z + z];
    }
  }
  return hits;
}

// ---------------------------------------------------------------------------

namespace reference {

Matrix patch_series(const Volume4D& volume, const Mask3D& mask, std::span<const Coord> centers,
                    long side) {
  Matrix out(centers.size(), volume.timepoints());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    std::vector<Coord> gm;
    for (const auto& v : patch_voxels(mask.dims(), centers[i], side))
      if (mask.at(v.x, v.y, v.z)) gm.push_back(v);
    if (gm.empty()) throw ContractError("patch series: a patch holds no GM voxel");
    const auto s = mean_time_series(volume, gm);
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

FcResult fc_matrix(const Matrix& ps, const Matrix& as) {
  if (ps.cols != as.cols)
    throw DimensionError("fc_matrix: patch and anchor series lengths differ");
  FcResult r;
  r.values = Matrix(ps.rows, as.rows);
  r.flags.assign(ps.rows * as.rows, 0);
  for (std::size_t i = 0; i < ps.rows; ++i)
    for (std::size_t j = 0; j < as.rows; ++j) {
      const auto c = pearson(ps.row(i), as.row(j));
      r.values(i, j) = c.value;
      if (c.degenerate) {
        r.flags[i * as.rows + j] = 1;
        ++r.degenerate;
      }
    }
  return r;
}

std::vector<double> boundary_distances(const Mask3D& mask, std::span<const Point3> points) {
  const auto& d = mask.dims();
  std::vector<Coord> boundary;
  for (long x = 0; x < static_cast<long>(d.x); ++x)
    for (long y = 0; y < static_cast<long>(d.y); ++y)
      for (long z = 0; z < static_cast<long>(d.z); ++z)
        if (is_boundary_voxel(mask, x, y, z)) boundary.push_back({x, y, z});
  if (boundary.empty()) throw ContractError("boundary distance: mask is empty");
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : boundary) {
      const double dx = b.x - p.x, dy = b.y - p.y, dz = b.z - p.z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

std::vector<std::uint32_t> coverage_hits(const Dims3& dims, std::span<const Coord> centers,
                                         std::span<const long> sides) {
  std::vector<std::uint32_t> hits(dims.count(), 0);
  for (std::size_t k = 0; k < centers.size(); ++k)
    for (const auto& v : patch_voxels(dims, centers[k], sides[k]))
      ++hits[(static_cast<std::size_t>(v.x) * dims.y + v.y) * dims.z + v.z];
  return hits;
}

}  // namespace reference

}  // namespace abfr::kernels
