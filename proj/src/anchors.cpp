#include "abfr/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>

#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"
#include "abfr/kernels.hpp"

namespace abfr {

using nlohmann::json;

SupportTable::SupportTable(const Mask3D& mask)
    : dims_(mask.dims()), sums_((dims_.x + 1) * (dims_.y + 1) * (dims_.z + 1), 0) {
  const std::size_t sy = dims_.z + 1, sx = (dims_.y + 1) * sy;
  for (std::size_t x = 1; x <= dims_.x; ++x)
    for (std::size_t y = 1; y <= dims_.y; ++y)
      for (std::size_t z = 1; z <= dims_.z; ++z) {
        const std::uint64_t v = mask.at(static_cast<long>(x - 1), static_cast<long>(y - 1),
                                        static_cast<long>(z - 1));
        sums_[x * sx + y * sy + z] = v + sums_[(x - 1) * sx + y * sy + z] +
                                     sums_[x * sx + (y - 1) * sy + z] +
                                     sums_[x * sx + y * sy + z - 1] -
                                     sums_[(x - 1) * sx + (y - 1) * sy + z] -
                                     sums_[(x - 1) * sx + y * sy + z - 1] -
                                     sums_[x * sx + (y - 1) * sy + z - 1] +
                                     sums_[(x - 1) * sx + (y - 1) * sy + z - 1];
      }
}

std::uint64_t SupportTable::at(long x, long y, long z) const {
  const std::size_t sy = dims_.z + 1, sx = (dims_.y + 1) * sy;
  return sums_[static_cast<std::size_t>(x) * sx + static_cast<std::size_t>(y) * sy +
               static_cast<std::size_t>(z)];
}

std::uint64_t SupportTable::box(Coord lo, Coord hi) const {
  const long x0 = std::max(lo.x, 0L), y0 = std::max(lo.y, 0L), z0 = std::max(lo.z, 0L);
  const long x1 = std::min(hi.x, static_cast<long>(dims_.x) - 1);
  const long y1 = std::min(hi.y, static_cast<long>(dims_.y) - 1);
  const long z1 = std::min(hi.z, static_cast<long>(dims_.z) - 1);
  if (x0 > x1 || y0 > y1 || z0 > z1) return 0;
  // Inclusion-exclusion over the (x1+1, y1+1, z1+1) corner.
  const long X = x1 + 1, Y = y1 + 1, Z = z1 + 1;
  return at(X, Y, Z) - at(x0, Y, Z) - at(X, y0, Z) - at(X, Y, z0) + at(x0, y0, Z) +
         at(x0, Y, z0) + at(X, y0, z0) - at(x0, y0, z0);
}

std::uint64_t gm_support(const SupportTable& table, const PatchSpec& p) {
  const long e = p.side - 1;
  return table.box(p.top_left, {p.top_left.x + e, p.top_left.y + e, p.top_left.z + e});
}

std::uint64_t gm_support(const Mask3D& mask, const PatchSpec& patch) {
  return gm_support(SupportTable(mask), patch);
}

Point3 patch_center(const PatchSpec& p) {
  const double h = static_cast<double>(p.side) / 2.0;
  return {p.top_left.x + h, p.top_left.y + h, p.top_left.z + h};
}

// ---------------------------------------------------------------------------

AnchorSet select_random_anchors(const Mask3D& mask, const RandomAnchorOptions& o, Rng& rng,
                                std::uint64_t* attempts_out) {
  const auto& d = mask.dims();
  if (o.count == 0) throw ConfigError("anchors: H must be >= 1");
  if (o.side < 1) throw ConfigError("anchors: side must be >= 1");
  if (o.tau < 1) throw ConfigError("anchors: tau must be >= 1");
  if (static_cast<std::size_t>(o.side) > std::min({d.x, d.y, d.z}))
    throw ConfigError("anchors: side exceeds the volume");
  const auto cube = static_cast<std::uint64_t>(o.side) * o.side * o.side;
  if (o.tau > cube)
    throw InfeasibleError("anchors: tau " + std::to_string(o.tau) + " exceeds the " +
                              std::to_string(cube) + " voxels of a patch",
                          0.0);

  const std::uint64_t max_attempts = o.max_attempts ? o.max_attempts : 1000 * o.count;
  const SupportTable table(mask);
  AnchorSet set;
  set.mode = "random";
  set.side = o.side;
  set.tau = o.tau;
  set.dims = d;
  std::uint64_t attempts = 0;
  while (set.anchors.size() < o.count) {
    if (attempts == max_attempts) {
      const double rate = static_cast<double>(set.anchors.size()) / static_cast<double>(attempts);
      throw InfeasibleError("anchors: only " + std::to_string(set.anchors.size()) + " of " +
                                std::to_string(o.count) + " valid anchors after " +
                                std::to_string(attempts) + " attempts (acceptance rate " +
                                std::to_string(rate) + ")",
                            rate);
    }
    ++attempts;
    PatchSpec p;
    p.side = o.side;
    p.top_left.x = static_cast<long>(rng.uniform_int(0, d.x - o.side));
    p.top_left.y = static_cast<long>(rng.uniform_int(0, d.y - o.side));
    p.top_left.z = static_cast<long>(rng.uniform_int(0, d.z - o.side));
    if (gm_support(table, p) >= o.tau) set.anchors.push_back(p);
  }
  if (attempts_out) *attempts_out = attempts;
  return set;
}

GridAnchorOptions default_grid_options(const Mask3D& mask, long side, std::uint64_t tau) {
  const auto& d = mask.dims();
  Coord lo{static_cast<long>(d.x), static_cast<long>(d.y), static_cast<long>(d.z)};
  Coord hi{-1, -1, -1};
  for (long x = 0; x < static_cast<long>(d.x); ++x)
    for (long y = 0; y < static_cast<long>(d.y); ++y)
      for (long z = 0; z < static_cast<long>(d.z); ++z)
        if (mask.at(x, y, z)) {
          lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
          hi = {std::max(hi.x, x), std::max(hi.y, y), std::max(hi.z, z)};
        }
  if (hi.x < 0) throw ContractError("grid anchors: mask is empty");
  GridAnchorOptions o;
  o.roi_min = lo;
  o.roi_max = hi;
  o.stride = {side, side, side};
  o.side = side;
  o.tau = tau;
  return o;
}

AnchorSet select_grid_anchors(const Mask3D& mask, const GridAnchorOptions& o,
                              GridDiagnostics* diagnostics) {
  const auto& d = mask.dims();
  if (o.side < 1) throw ConfigError("grid anchors: side must be >= 1");
  const long lo[3] = {o.roi_min.x, o.roi_min.y, o.roi_min.z};
  const long hi[3] = {o.roi_max.x, o.roi_max.y, o.roi_max.z};
  const long ext[3] = {static_cast<long>(d.x), static_cast<long>(d.y), static_cast<long>(d.z)};
  long steps[3], offsets[3];
  for (int a = 0; a < 3; ++a) {
    if (o.stride[a] < 1) throw ConfigError("grid anchors: strides must be positive");
    if (lo[a] < 0 || hi[a] >= ext[a] || lo[a] > hi[a])
      throw ConfigError("grid anchors: ROI outside the volume");
    const long span = hi[a] - lo[a] + 1;
    steps[a] = span / o.stride[a];
    offsets[a] = (span - steps[a] * o.stride[a]) / 2;
  }
  if (steps[0] == 0 || steps[1] == 0 || steps[2] == 0)
    throw ConfigError("grid anchors: empty candidate lattice (ROI narrower than the stride)");

  GridDiagnostics diag;
  diag.offsets = {offsets[0], offsets[1], offsets[2]};
  const SupportTable table(mask);
  AnchorSet set;
  set.mode = "grid";
  set.side = o.side;
  set.tau = o.tau;
  set.dims = d;
  for (long i = 0; i < steps[0]; ++i)
    for (long j = 0; j < steps[1]; ++j)
      for (long k = 0; k < steps[2]; ++k) {
        ++diag.candidates;
        PatchSpec p;
        p.side = o.side;
        p.top_left = {lo[0] + i * o.stride[0] + offsets[0], lo[1] + j * o.stride[1] + offsets[1],
                      lo[2] + k * o.stride[2] + offsets[2]};
        if (p.top_left.x + o.side > ext[0] || p.top_left.y + o.side > ext[1] ||
            p.top_left.z + o.side > ext[2]) {
          ++diag.dropped_bounds;
          continue;
        }
        if (gm_support(table, p) < o.tau) {
          ++diag.dropped_support;
          continue;
        }
        set.anchors.push_back(p);
      }
  if (diagnostics) *diagnostics = diag;
  if (set.anchors.empty())
    throw InfeasibleError("grid anchors: no lattice candidate satisfies the GM threshold", 0.0);
  return set;
}

void build_label_image(AnchorSet& set, const Mask3D& mask) {
  const auto& d = mask.dims();
  if (set.anchors.size() > 65535) throw ConfigError("anchors: at most 65535 anchors");
  set.dims = d;
  set.labels.assign(d.count(), 0);
  // Reverse order so the lowest index is written last and wins.
  for (std::size_t j = set.anchors.size(); j-- > 0;) {
    const auto& p = set.anchors[j];
    for (long x = std::max(0L, p.top_left.x);
         x < std::min<long>(p.top_left.x + p.side, static_cast<long>(d.x)); ++x)
      for (long y = std::max(0L, p.top_left.y);
           y < std::min<long>(p.top_left.y + p.side, static_cast<long>(d.y)); ++y)
        for (long z = std::max(0L, p.top_left.z);
             z < std::min<long>(p.top_left.z + p.side, static_cast<long>(d.z)); ++z)
          set.labels[mask.index(x, y, z)] = static_cast<std::uint16_t>(j + 1);
  }
  std::vector<std::size_t> support(set.anchors.size() + 1, 0);
  for (std::size_t v = 0; v < set.labels.size(); ++v)
    if (mask.at(v)) ++support[set.labels[v]];
  for (std::size_t j = 0; j < set.anchors.size(); ++j)
    if (support[j + 1] == 0)
      throw ContractError("anchors: anchor index " + std::to_string(j) + " (label " +
                          std::to_string(j + 1) +
                          ") is starved (no GM voxel left after overlap resolution)");
}

// ---------------------------------------------------------------------------

std::vector<HistogramBin> histogram(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0.0)) throw ConfigError("histogram: bin width must be > 0");
  if (values.empty()) return {};
  const double top = *std::max_element(values.begin(), values.end());
  const auto bins = static_cast<std::size_t>(std::floor(top / bin_width)) + 1;
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].left = static_cast<double>(b) * bin_width;
    out[b].right = static_cast<double>(b + 1) * bin_width;
  }
  for (double v : values) ++out[std::min(bins - 1, static_cast<std::size_t>(v / bin_width))].count;
  return out;
}

BoundaryReport boundary_distance_report(const AnchorSet& set, const Mask3D& mask,
                                        double bin_width) {
  const BoundaryField field(mask);
  std::vector<Point3> centers;
  centers.reserve(set.anchors.size());
  for (const auto& p : set.anchors) centers.push_back(patch_center(p));
  BoundaryReport r;
  r.distances = kernels::boundary_distances(field, centers);
  r.histogram = histogram(r.distances, bin_width);
  double s = 0.0;
  for (double v : r.distances) s += v;
  r.mean = r.distances.empty() ? 0.0 : s / static_cast<double>(r.distances.size());
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_labels(const Dims3& dims, std::span<const std::uint16_t> labels) {
  if (labels.size() != dims.count()) throw DimensionError("ABFL: label count does not match dims");
  io::Writer w;
  w.put_bytes("ABFL");
  w.put(std::uint32_t{1});
  w.put(static_cast<std::uint64_t>(dims.x));
  w.put(static_cast<std::uint64_t>(dims.y));
  w.put(static_cast<std::uint64_t>(dims.z));
  for (auto v : labels) w.put(v);
  return std::move(w.bytes());
}

std::vector<std::uint16_t> decode_labels(std::span<const std::uint8_t> bytes, Dims3* dims) {
  io::Reader r(bytes, "ABFL");
  if (r.get_string(4) != "ABFL") throw FormatError("ABFL: bad magic");
  if (r.get<std::uint32_t>() != 1) throw FormatError("ABFL: unsupported version");
  Dims3 d;
  d.x = r.get<std::uint64_t>();
  d.y = r.get<std::uint64_t>();
  d.z = r.get<std::uint64_t>();
  if (d.x == 0 || d.y == 0 || d.z == 0 || d.x > r.remaining() || d.y > r.remaining() ||
      d.z > r.remaining() || d.count() * 2 != r.remaining())
    throw FormatError("ABFL: length mismatch");
  std::vector<std::uint16_t> labels(d.count());
  for (auto& v : labels) v = r.get<std::uint16_t>();
  if (dims) *dims = d;
  return labels;
}

std::string anchors_to_json(const AnchorSet& set, const std::string& label_file) {
  json j;
  j["mode"] = set.mode;
  j["seed"] = set.seed;
  j["s"] = set.side;
  j["tau"] = set.tau;
  j["dims"] = {set.dims.x, set.dims.y, set.dims.z};
  json list = json::array();
  for (const auto& p : set.anchors) list.push_back({p.top_left.x, p.top_left.y, p.top_left.z});
  j["anchors"] = list;
  j["label_image"] = label_file;
  return j.dump(2) + "\n";
}

void save_anchor_set(const AnchorSet& set, const std::string& json_path,
                     const std::string& label_path) {
  const auto label_name = std::filesystem::path(label_path).filename().string();
  const auto text = anchors_to_json(set, label_name);
  io::write_file(json_path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  io::write_file(label_path, encode_labels(set.dims, set.labels));
}

AnchorSet load_anchor_set(const std::string& json_path) {
  const auto bytes = io::read_file(json_path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("anchors JSON: " + std::string(e.what()));
  }
  AnchorSet set;
  try {
    set.mode = j.at("mode").get<std::string>();
    set.seed = j.at("seed").get<std::uint64_t>();
    set.side = j.at("s").get<long>();
    set.tau = j.at("tau").get<std::uint64_t>();
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError("anchors JSON: dims must have 3 entries");
    set.dims = {dims[0], dims[1], dims[2]};
    for (const auto& a : j.at("anchors")) {
      const auto t = a.get<std::vector<long>>();
      if (t.size() != 3) throw FormatError("anchors JSON: anchor must have 3 coordinates");
      set.anchors.push_back({{t[0], t[1], t[2]}, set.side});
    }
    const auto label_file = j.at("label_image").get<std::string>();
    const auto label_path = std::filesystem::path(json_path).parent_path() / label_file;
    Dims3 d;
    set.labels = decode_labels(io::read_file(label_path.string()), &d);
    if (!(d == set.dims)) throw FormatError("anchors: label image dims differ from JSON dims");
  } catch (const json::exception& e) {
    throw FormatError("anchors JSON: " + std::string(e.what()));
  }
  return set;
}

}  // namespace abfr
