#include "abfr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"
#include "abfr/rng.hpp"

namespace abfr {

Volume4D::Volume4D(std::size_t t, Dims3 spatial, std::vector<double> data)
    : t_(t), dims_(spatial), data_(std::move(data)) {
  if (t_ == 0 || dims_.x == 0 || dims_.y == 0 || dims_.z == 0)
    throw DimensionError("volume dims must be positive");
  if (data_.size() != t_ * dims_.count())
    throw DimensionError("volume data length does not match T*X*Y*Z");
  for (double v : data_)
    if (!std::isfinite(v)) throw DomainError("volume contains a non-finite value");
}

std::vector<double> Volume4D::series(std::size_t voxel) const {
  std::vector<double> s(t_);
  for (std::size_t t = 0; t < t_; ++t) s[t] = at(t, voxel);
  return s;
}

Mask3D::Mask3D(Dims3 dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  if (bits_.size() != dims_.count()) throw DimensionError("mask data length does not match dims");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t Mask3D::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kRawVersion = 1;
}

std::vector<std::uint8_t> encode_raw(const Volume4D& volume) {
  const auto& d = volume.spatial();
  if (volume.timepoints() == 0 || d.count() == 0)
    throw DimensionError("save_raw: empty volume dims");
  io::Writer w;
  w.put_bytes("ABFV");
  w.put(kRawVersion);
  w.put(static_cast<std::uint64_t>(volume.timepoints()));
  w.put(static_cast<std::uint64_t>(d.x));
  w.put(static_cast<std::uint64_t>(d.y));
  w.put(static_cast<std::uint64_t>(d.z));
  w.put_doubles(volume.data());
  return std::move(w.bytes());
}

Volume4D decode_raw(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "ABFV");
  if (r.get_string(4) != "ABFV") throw FormatError("ABFV: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kRawVersion) throw FormatError("ABFV: unsupported version");
  std::uint64_t dims[4];
  for (auto& d : dims) d = r.get<std::uint64_t>();
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d == 0 || d > r.remaining()) throw FormatError("ABFV: length mismatch (bad dims)");
    n *= d;
  }
  if (n * sizeof(double) != r.remaining())
    throw FormatError("ABFV: length mismatch: header declares " + std::to_string(n) +
                      " values, payload holds " + std::to_string(r.remaining()) + " bytes");
  std::vector<double> data(n);
  r.get_doubles(data);
  return Volume4D(dims[0], {dims[1], dims[2], dims[3]}, std::move(data));
}

void save_raw(const Volume4D& volume, const std::string& path) {
  io::write_file(path, encode_raw(volume));
}

Volume4D load_raw(const std::string& path) { return decode_raw(io::read_file(path)); }

Volume4D mask_to_volume(const Mask3D& mask) {
  std::vector<double> data(mask.bits().begin(), mask.bits().end());
  return Volume4D(1, mask.dims(), std::move(data));
}

Mask3D volume_to_mask(const Volume4D& volume) {
  std::vector<std::uint8_t> bits(volume.voxel_count());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = volume.at(0, i) != 0.0 ? 1 : 0;
  return Mask3D(volume.spatial(), std::move(bits));
}

// ---------------------------------------------------------------------------
// Boundary distance

bool is_boundary_voxel(const Mask3D& mask, long x, long y, long z) {
  if (!mask.at(x, y, z)) return false;
  return !mask.at_safe(x - 1, y, z) || !mask.at_safe(x + 1, y, z) || !mask.at_safe(x, y - 1, z) ||
         !mask.at_safe(x, y + 1, z) || !mask.at_safe(x, y, z - 1) || !mask.at_safe(x, y, z + 1);
}

BoundaryField::BoundaryField(const Mask3D& mask) : dims_(mask.dims()), bits_(dims_.count(), 0) {
  for (long x = 0; x < static_cast<long>(dims_.x); ++x)
    for (long y = 0; y < static_cast<long>(dims_.y); ++y)
      for (long z = 0; z < static_cast<long>(dims_.z); ++z)
        if (is_boundary_voxel(mask, x, y, z)) {
          bits_[mask_dims_index(x, y, z)] = 1;
          ++count_;
        }
  if (count_ == 0) throw ContractError("boundary distance: mask is empty");
}

double BoundaryField::distance(const Point3& p) const {
  // Search Chebyshev shells of growing radius around the nearest grid voxel.
  // A voxel on shell r lies at least (r - e) away from p, where e is the
  // Chebyshev offset between p and the shell centre.
  auto clamp_axis = [](double v, std::size_t n) {
    return std::clamp(std::lround(v), 0L, static_cast<long>(n) - 1);
  };
  const long cx = clamp_axis(p.x, dims_.x), cy = clamp_axis(p.y, dims_.y),
             cz = clamp_axis(p.z, dims_.z);
  const double e = std::max({std::abs(p.x - cx), std::abs(p.y - cy), std::abs(p.z - cz)});
  const long max_r = static_cast<long>(std::max({dims_.x, dims_.y, dims_.z}));
  double best2 = std::numeric_limits<double>::infinity();
  auto visit = [&](long x, long y, long z) {
    if (!inside(dims_, x, y, z) || !bits_[mask_dims_index(x, y, z)]) return;
    const double dx = x - p.x, dy = y - p.y, dz = z - p.z;
    best2 = std::min(best2, dx * dx + dy * dy + dz * dz);
  };
  for (long r = 0; r <= max_r; ++r) {
    const double lower = static_cast<double>(r) - e;
    if (lower > 0.0 && lower * lower >= best2) break;
    for (long x = cx - r; x <= cx + r; ++x)
      for (long y = cy - r; y <= cy + r; ++y) {
        const bool edge = x == cx - r || x == cx + r || y == cy - r || y == cy + r;
        if (edge) {
          for (long z = cz - r; z <= cz + r; ++z) visit(x, y, z);
        } else {
          visit(x, y, cz - r);
          if (r > 0) visit(x, y, cz + r);
        }
      }
  }
  return std::sqrt(best2);
}

double gm_boundary_distance(const Mask3D& mask, const Point3& point) {
  return BoundaryField(mask).distance(point);
}

// ---------------------------------------------------------------------------
// Phantom

void validate(const PhantomSpec& spec) {
  if (spec.dims.count() == 0) throw ConfigError("phantom: dims must be positive");
  if (spec.timepoints < 2) throw ConfigError("phantom: need at least 2 timepoints");
  if (spec.n_regions < 2) throw ConfigError("phantom: n_regions must be >= 2");
  if (!(spec.class_effect >= 0.0)) throw ConfigError("phantom: class_effect must be >= 0");
  if (!(spec.noise_sigma > 0.0)) throw ConfigError("phantom: noise_sigma must be > 0");
  if (!(spec.latent_noise >= 0.0)) throw ConfigError("phantom: latent_noise must be >= 0");
  if (!(spec.thickness > 0.0)) throw ConfigError("phantom: thickness must be > 0");
  for (double r : spec.outer_radii)
    if (!(r > 0.0)) throw ConfigError("phantom: radii must be > 0");
  for (auto [a, b] : spec.planted_pairs)
    if (a >= spec.n_regions || b >= spec.n_regions || a == b)
      throw ConfigError("phantom: planted pair references an invalid region");
}

Mask3D phantom_mask(const PhantomSpec& spec) {
  validate(spec);
  const auto& d = spec.dims;
  const double c[3] = {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
  const auto& ro = spec.outer_radii;
  const double ri[3] = {ro[0] - spec.thickness, ro[1] - spec.thickness, ro[2] - spec.thickness};
  Mask3D mask(d);
  for (long x = 0; x < static_cast<long>(d.x); ++x)
    for (long y = 0; y < static_cast<long>(d.y); ++y)
      for (long z = 0; z < static_cast<long>(d.z); ++z) {
        const double v[3] = {x - c[0], y - c[1], z - c[2]};
        double outer = 0.0, inner = 0.0;
        bool hollow = true;
        for (int a = 0; a < 3; ++a) {
          outer += (v[a] / ro[a]) * (v[a] / ro[a]);
          if (ri[a] > 0.0)
            inner += (v[a] / ri[a]) * (v[a] / ri[a]);
          else
            hollow = false;
        }
        if (outer <= 1.0 && (!hollow || inner > 1.0)) mask.set(x, y, z, true);
      }
  const std::size_t n = mask.count();
  if (n == 0) throw ConfigError("phantom: GM shell is empty for these dims/radii");
  if (n == d.count()) throw ConfigError("phantom: GM shell fills the whole volume");
  return mask;
}

std::vector<int> phantom_regions(const PhantomSpec& spec, const Mask3D& mask) {
  // Community seeds on a Fibonacci sphere; each GM voxel joins the seed whose
  // direction is closest to its own (normalized by the shell radii).
  const std::size_t k = spec.n_regions;
  std::vector<std::array<double, 3>> seeds(k);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < k; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(k);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double theta = golden * static_cast<double>(i);
    seeds[i] = {r * std::cos(theta), r * std::sin(theta), z};
  }
  const auto& d = spec.dims;
  const double c[3] = {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
  std::vector<int> regions(d.count(), -1);
  for (long x = 0; x < static_cast<long>(d.x); ++x)
    for (long y = 0; y < static_cast<long>(d.y); ++y)
      for (long z = 0; z < static_cast<long>(d.z); ++z) {
        if (!mask.at(x, y, z)) continue;
        const double v[3] = {(x - c[0]) / spec.outer_radii[0], (y - c[1]) / spec.outer_radii[1],
                             (z - c[2]) / spec.outer_radii[2]};
        int best = 0;
        double best_dot = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) {
          const double dot = v[0] * seeds[i][0] + v[1] * seeds[i][1] + v[2] * seeds[i][2];
          if (dot > best_dot) {
            best_dot = dot;
            best = static_cast<int>(i);
          }
        }
        regions[mask.index(x, y, z)] = best;
      }
  return regions;
}

Phantom make_phantom(const PhantomSpec& spec, int label) {
  if (label != 0 && label != 1) throw ConfigError("phantom: label must be 0 or 1");
  Phantom ph;
  ph.mask = phantom_mask(spec);
  ph.regions = phantom_regions(spec, ph.mask);
  ph.label = label;

  Rng rng(spec.seed);
  const std::size_t T = spec.timepoints, k = spec.n_regions;
  const double two_pi = 2.0 * std::numbers::pi;

  // Region-specific integer cycle counts keep latents of distinct regions
  // orthogonal apart from their noise terms.
  ph.latents = Matrix(k, T);
  for (std::size_t r = 0; r < k; ++r) {
    const double f1 = static_cast<double>(2 + 2 * r);
    const double f2 = static_cast<double>(3 + 2 * r + 2 * k);
    const double phase1 = two_pi * rng.uniform();
    const double phase2 = two_pi * rng.uniform();
    for (std::size_t t = 0; t < T; ++t) {
      const double tt = static_cast<double>(t) / static_cast<double>(T);
      ph.latents(r, t) = std::sin(two_pi * f1 * tt + phase1) +
                         0.7 * std::sin(two_pi * f2 * tt + phase2) +
                         spec.latent_noise * rng.normal();
    }
  }
  if (label == 1) {
    const double w = spec.class_effect;
    for (auto [a, b] : spec.planted_pairs)
      for (std::size_t t = 0; t < T; ++t)
        ph.latents(b, t) = (1.0 - w) * ph.latents(b, t) + w * ph.latents(a, t);
  }

  const std::size_t V = spec.dims.count();
  std::vector<double> data(T * V);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v) {
      const int r = ph.regions[v];
      const double signal = r >= 0 ? ph.latents(static_cast<std::size_t>(r), t) : 0.0;
      data[t * V + v] = signal + spec.noise_sigma * rng.normal();
    }
  ph.volume = Volume4D(T, spec.dims, std::move(data));
  return ph;
}

}  // namespace abfr
