#include "abfr/pipeline.hpp"

#include <cstdio>

#include "abfr/error.hpp"
#include "abfr/rng.hpp"

namespace abfr {

std::string subject_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%04zu", index);
  return buf;
}

PhantomSpec subject_spec(const PhantomSpec& base, std::uint64_t seed, std::size_t index) {
  PhantomSpec spec = base;
  spec.seed = Rng::mix(Rng::mix(seed, kStreamPhantom), index);
  return spec;
}

int subject_label(std::size_t index) { return static_cast<int>(index % 2); }

SubjectRepresentation represent_subject(const Volume4D& volume, const Mask3D& mask,
                                        const AnchorSet& anchors,
                                        const IterativeOptions& options, std::uint64_t seed) {
  const Matrix series = anchor_series(volume, mask, anchors);
  Rng rng(seed);
  auto result = iterative_representation(volume, mask, series, options, rng);
  result.rep.seed = seed;
  return std::move(result.rep);
}

std::vector<SubjectRepresentation> phantom_cohort(const CohortOptions& o) {
  if (o.subjects == 0) throw ConfigError("cohort: need at least one subject");
  const Mask3D mask = phantom_mask(o.phantom);
  Rng anchor_rng(Rng::mix(o.seed, kStreamAnchors));
  AnchorSet anchors = select_random_anchors(mask, o.anchors, anchor_rng);
  anchors.seed = o.seed;
  build_label_image(anchors, mask);
  std::vector<SubjectRepresentation> out;
  for (std::size_t i = 0; i < o.subjects; ++i) {
    const int label = subject_label(i);
    const Phantom p = make_phantom(subject_spec(o.phantom, o.seed, i), label);
    auto rep = represent_subject(p.volume, mask, anchors, o.sampling,
                                 Rng::mix(Rng::mix(o.seed, kStreamSubject), i));
    rep.label = label;
    rep.subject_id = subject_name(i);
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace abfr
