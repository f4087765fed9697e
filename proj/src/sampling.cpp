#include "abfr/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"

namespace abfr {

long patch_radius(long side) {
  if (side < 1) throw ConfigError("patch side must be >= 1");
  return (side + 1) / 2 - 1;
}

std::vector<Coord> patch_voxels(const Dims3& dims, Coord c, long side) {
  const long r = patch_radius(side);
  std::vector<Coord> out;
  for (long x = c.x - r; x <= c.x + r; ++x)
    for (long y = c.y - r; y <= c.y + r; ++y)
      for (long z = c.z - r; z <= c.z + r; ++z)
        if (inside(dims, x, y, z)) out.push_back({x, y, z});
  return out;
}

std::vector<double> mean_time_series(const Volume4D& volume, std::span<const Coord> voxels) {
  if (voxels.empty()) throw ContractError("mean_time_series: empty voxel set");
  const std::size_t T = volume.timepoints();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (const auto& v : voxels) s += volume.at(t, v.x, v.y, v.z);
    out[t] = s / static_cast<double>(voxels.size());
  }
  return out;
}

Matrix anchor_series(const Volume4D& volume, const Mask3D& mask, const AnchorSet& anchors) {
  if (!(volume.spatial() == mask.dims()) || !(anchors.dims == mask.dims()))
    throw DimensionError("anchor_series: volume, mask and label image dims differ");
  if (anchors.labels.size() != mask.dims().count())
    throw ContractError("anchor_series: label image not built");
  const std::size_t H = anchors.size(), T = volume.timepoints(), V = volume.voxel_count();
  std::vector<std::vector<std::size_t>> members(H);
  for (std::size_t v = 0; v < V; ++v) {
    const auto j = anchors.labels[v];
    if (j > 0 && mask.at(v)) members[j - 1].push_back(v);
  }
  Matrix out(H, T);
  for (std::size_t j = 0; j < H; ++j) {
    if (members[j].empty())
      throw ContractError("anchor_series: anchor " + std::to_string(j) + " has no GM voxel");
    const double inv = 1.0 / static_cast<double>(members[j].size());
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (auto v : members[j]) s += volume.at(t, v);
      out(j, t) = s * inv;
    }
  }
  return out;
}

std::vector<double> patch_series(const Volume4D& volume, const Mask3D& mask, Coord center,
                                 long side) {
  std::vector<Coord> gm;
  for (const auto& v : patch_voxels(mask.dims(), center, side))
    if (mask.at(v.x, v.y, v.z)) gm.push_back(v);
  if (gm.empty()) throw ContractError("patch_series: patch has no GM voxel (invalid patch)");
  return mean_time_series(volume, gm);
}

Correlation pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("pearson: series lengths differ");
  const std::size_t n = u.size();
  if (n < 2) throw ContractError("pearson: need at least 2 samples");
  double mu = 0.0, mv = 0.0, pu = 0.0, pv = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    mu += u[t];
    mv += v[t];
    pu = std::max(pu, std::abs(u[t]));
    pv = std::max(pv, std::abs(v[t]));
  }
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suv = 0.0, suu = 0.0, svv = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double a = u[t] - mu, b = v[t] - mv;
    suv += a * b;
    suu += a * a;
    svv += b * b;
  }
  const double nn = static_cast<double>(n);
  if (std::sqrt(suu / nn) <= 1e-12 * std::max(1.0, pu) ||
      std::sqrt(svv / nn) <= 1e-12 * std::max(1.0, pv))
    return {0.0, true};
  return {std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------

Point3 normalized_position(const Dims3& d, Coord c) {
  return {static_cast<double>(c.x) / static_cast<double>(d.x),
          static_cast<double>(c.y) / static_cast<double>(d.y),
          static_cast<double>(c.z) / static_cast<double>(d.z)};
}

std::vector<Coord> sample_patch_centers(const Mask3D& mask, const SamplingOptions& o, Rng& rng) {
  if (o.count == 0) throw ConfigError("sampling: N must be >= 1");
  if (o.tau < 1) throw ConfigError("sampling: tau must be >= 1");
  const long r = patch_radius(o.side);
  const auto& d = mask.dims();
  const SupportTable table(mask);
  const std::uint64_t max_attempts = o.max_attempts ? o.max_attempts : 1000 * o.count;
  std::vector<Coord> centers;
  centers.reserve(o.count);
  std::uint64_t attempts = 0;
  while (centers.size() < o.count) {
    if (attempts == max_attempts) {
      const double rate = static_cast<double>(centers.size()) / static_cast<double>(attempts);
      throw InfeasibleError("sampling: only " + std::to_string(centers.size()) + " of " +
                                std::to_string(o.count) + " valid patches after " +
                                std::to_string(attempts) + " attempts",
                            rate);
    }
    ++attempts;
    Coord c{static_cast<long>(rng.uniform_int(0, d.x - 1)),
            static_cast<long>(rng.uniform_int(0, d.y - 1)),
            static_cast<long>(rng.uniform_int(0, d.z - 1))};
    if (table.box({c.x - r, c.y - r, c.z - r}, {c.x + r, c.y + r, c.z + r}) >= o.tau)
      centers.push_back(c);
  }
  return centers;
}

std::vector<SampledPatch> sample_patches(const Volume4D& volume, const Mask3D& mask,
                                         const SamplingOptions& o, Rng& rng) {
  if (!(volume.spatial() == mask.dims()))
    throw DimensionError("sample_patches: volume and mask dims differ");
  const auto centers = sample_patch_centers(mask, o, rng);
  const Matrix series = kernels::patch_series(volume, mask, centers, o.side);
  std::vector<SampledPatch> out(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    out[i].center = centers[i];
    out[i].side = o.side;
    out[i].series.assign(series.row(i).begin(), series.row(i).end());
    out[i].pos = normalized_position(mask.dims(), centers[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix average_matrices(std::span<const Matrix> ms) {
  if (ms.empty()) throw ContractError("average: no matrices");
  Matrix out(ms[0].rows, ms[0].cols);
  for (const auto& m : ms) {
    if (m.rows != out.rows || m.cols != out.cols)
      throw DimensionError("average: matrix shapes differ");
    for (std::size_t k = 0; k < m.data.size(); ++k) out.data[k] += m.data[k];
  }
  const double count = static_cast<double>(ms.size());
  for (auto& v : out.data) v /= count;
  return out;
}

double across_repeat_variance(std::span<const Matrix> ms) {
  if (ms.size() < 2) throw ContractError("variance: need at least 2 repeats");
  const Matrix mean = average_matrices(ms);
  double total = 0.0;
  for (std::size_t k = 0; k < mean.data.size(); ++k) {
    double ss = 0.0;
    for (const auto& m : ms) {
      const double d = m.data[k] - mean.data[k];
      ss += d * d;
    }
    total += ss / static_cast<double>(ms.size() - 1);
  }
  return total / static_cast<double>(mean.data.size());
}

IterativeResult iterative_representation(const Volume4D& volume, const Mask3D& mask,
                                         const Matrix& anchors, const IterativeOptions& o,
                                         Rng& rng) {
  if (o.sizes.empty()) throw ConfigError("iterative sampling: sizes must be non-empty");
  if (!(volume.spatial() == mask.dims()))
    throw DimensionError("iterative sampling: volume and mask dims differ");
  if (anchors.cols != volume.timepoints())
    throw DimensionError("iterative sampling: anchor series length differs from T");
  const std::size_t R = o.sizes.size(), N = o.count;
  IterativeResult out;
  std::vector<Matrix> fcs;
  for (long side : o.sizes) {
    IterationResult it;
    it.side = side;
    it.centers = sample_patch_centers(mask, {N, side, o.tau, 0}, rng);
    const Matrix series = kernels::patch_series(volume, mask, it.centers, side);
    it.fc = kernels::fc_matrix(series, anchors);
    fcs.push_back(it.fc.values);
    out.iterations.push_back(std::move(it));
  }
  auto& rep = out.rep;
  rep.fc = average_matrices(fcs);
  rep.positions = Matrix(N, 3 * R);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < N; ++i) {
      const Point3 p = normalized_position(mask.dims(), out.iterations[r].centers[i]);
      rep.positions(i, 3 * r + 0) = p.x;
      rep.positions(i, 3 * r + 1) = p.y;
      rep.positions(i, 3 * r + 2) = p.z;
    }
  rep.sizes = o.sizes;
  return out;
}

CoverageResult gm_coverage(std::span<const PatchSet> sets, const Mask3D& mask) {
  const std::size_t gm = mask.count();
  if (gm == 0) throw ContractError("coverage: mask is empty");
  std::vector<Coord> centers;
  std::vector<long> sides;
  for (const auto& s : sets)
    for (const auto& c : s.centers) {
      centers.push_back(c);
      sides.push_back(s.side);
    }
  CoverageResult r;
  r.hits = kernels::coverage_hits(mask.dims(), centers, sides);
  std::size_t covered = 0;
  for (std::size_t v = 0; v < r.hits.size(); ++v)
    if (mask.at(v) && r.hits[v] > 0) ++covered;
  r.percent = 100.0 * static_cast<double>(covered) / static_cast<double>(gm);
  return r;
}

double fc_sampling_variance(const Volume4D& volume, const Mask3D& mask, const Matrix& anchors,
                            const IterativeOptions& o, std::size_t repeats, Rng& rng) {
  if (repeats < 2) throw ConfigError("fc_sampling_variance: repeats must be >= 2");
  std::vector<Matrix> reps;
  reps.reserve(repeats);
  for (std::size_t k = 0; k < repeats; ++k)
    reps.push_back(iterative_representation(volume, mask, anchors, o, rng).rep.fc);
  return across_repeat_variance(reps);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_representation(const SubjectRepresentation& rep) {
  const std::size_t R = rep.positions.cols / 3;
  if (rep.positions.rows != rep.fc.rows || rep.positions.cols != 3 * R || R == 0)
    throw DimensionError("ABFR: positions must be [N x 3R]");
  io::Writer w;
  w.put_bytes("ABFR");
  w.put(std::uint32_t{1});
  w.put(static_cast<std::uint32_t>(rep.fc.rows));
  w.put(static_cast<std::uint32_t>(rep.fc.cols));
  w.put(static_cast<std::uint32_t>(R));
  w.put_doubles(rep.fc.data);
  w.put_doubles(rep.positions.data);
  w.put(static_cast<std::uint8_t>(rep.label.has_value()));
  w.put(static_cast<std::uint8_t>(rep.label.value_or(0)));
  return std::move(w.bytes());
}

SubjectRepresentation decode_representation(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "ABFR");
  if (r.get_string(4) != "ABFR") throw FormatError("ABFR: bad magic");
  if (r.get<std::uint32_t>() != 1) throw FormatError("ABFR: unsupported version");
  const std::size_t N = r.get<std::uint32_t>(), H = r.get<std::uint32_t>(),
                    R = r.get<std::uint32_t>();
  if (N == 0 || H == 0 || R == 0) throw FormatError("ABFR: zero extent");
  if ((N * H + N * 3 * R) * sizeof(double) + 2 != r.remaining())
    throw FormatError("ABFR: length mismatch");
  SubjectRepresentation rep;
  rep.fc = Matrix(N, H);
  rep.positions = Matrix(N, 3 * R);
  r.get_doubles(rep.fc.data);
  r.get_doubles(rep.positions.data);
  const auto has = r.get<std::uint8_t>();
  const auto label = r.get<std::uint8_t>();
  if (has) rep.label = label;
  return rep;
}

void save_representation(const SubjectRepresentation& rep, const std::string& path) {
  io::write_file(path, encode_representation(rep));
}

SubjectRepresentation load_representation(const std::string& path) {
  return decode_representation(io::read_file(path));
}

}  // namespace abfr
