// Times the OpenMP kernels against their serial references on a phantom.
// Usage: kernel_bench [side=48] [repeats=5]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "abfr/kernels.hpp"
#include "abfr/rng.hpp"
#include "abfr/sampling.hpp"
#include "abfr/volume.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double best_of(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace abfr;
  const long side = argc > 1 ? std::atol(argv[1]) : 48;
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;
  if (side < 8 || repeats < 1) {
    std::fprintf(stderr, "usage: kernel_bench [side>=8] [repeats>=1]\n");
    return 2;
  }

  PhantomSpec spec;
  const auto s = static_cast<std::size_t>(side);
  spec.dims = {s, s, s};
  const double r = 0.45 * static_cast<double>(side);
  spec.outer_radii = {r, r, r};
  spec.thickness = 0.15 * static_cast<double>(side);
  spec.seed = 1;
  const Phantom ph = make_phantom(spec, 1);

  Rng rng(2);
  SamplingOptions so;
  so.count = 512;
  so.side = 8;
  const auto centers = sample_patch_centers(ph.mask, so, rng);
  const auto anchors = sample_patch_centers(ph.mask, SamplingOptions{128, 8, 1, 0}, rng);
  const Matrix patch = kernels::reference::patch_series(ph.volume, ph.mask, centers, so.side);
  const Matrix anchor = kernels::reference::patch_series(ph.volume, ph.mask, anchors, so.side);
  const BoundaryField field(ph.mask);
  std::vector<Point3> points;
  for (int i = 0; i < 4096; ++i)
    points.push_back({rng.uniform() * side, rng.uniform() * side, rng.uniform() * side});
  std::vector<long> sides(centers.size(), so.side);

  struct Case {
    std::string name;
    std::function<void()> serial, parallel;
  };
  const std::vector<Case> cases = {
      {"patch_series",
       [&] { kernels::reference::patch_series(ph.volume, ph.mask, centers, so.side); },
       [&] { kernels::patch_series(ph.volume, ph.mask, centers, so.side); }},
      {"fc_matrix", [&] { kernels::reference::fc_matrix(patch, anchor); },
       [&] { kernels::fc_matrix(patch, anchor); }},
      {"boundary_distances", [&] { kernels::reference::boundary_distances(ph.mask, points); },
       [&] { kernels::boundary_distances(field, points); }},
      {"coverage_hits", [&] { kernels::reference::coverage_hits(spec.dims, centers, sides); },
       [&] { kernels::coverage_hits(spec.dims, centers, sides); }},
  };

  std::printf("kernel,threads,serial_s,parallel_s,speedup\n");
  for (const auto& c : cases) {
    const double ts = best_of(repeats, c.serial);
    const double tp = best_of(repeats, c.parallel);
    std::printf("%s,%d,%.6f,%.6f,%.2f\n", c.name.c_str(), kernels::max_threads(), ts, tp, ts / tp);
  }
  return 0;
}
