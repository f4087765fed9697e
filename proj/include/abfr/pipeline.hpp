#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abfr/anchors.hpp"
#include "abfr/sampling.hpp"
#include "abfr/volume.hpp"

namespace abfr {

// Stream ids used with Rng::mix so each stage draws independent randomness.
inline constexpr std::uint64_t kStreamPhantom = 0x5048414eULL;
inline constexpr std::uint64_t kStreamAnchors = 0x414e4348ULL;
inline constexpr std::uint64_t kStreamSubject = 0x5355424aULL;

std::string subject_name(std::size_t index);

// Subject i of a phantom cohort: labels alternate 0, 1, 0, ... and each
// subject's noise comes from its own stream of `seed`.
PhantomSpec subject_spec(const PhantomSpec& base, std::uint64_t seed, std::size_t index);
int subject_label(std::size_t index);

// Anchor series, then R-iteration sampling seeded by `seed`.
SubjectRepresentation represent_subject(const Volume4D& volume, const Mask3D& mask,
                                        const AnchorSet& anchors,
                                        const IterativeOptions& options, std::uint64_t seed);

struct CohortOptions {
  PhantomSpec phantom;
  std::size_t subjects = 80;
  RandomAnchorOptions anchors;
  IterativeOptions sampling;
  std::uint64_t seed = 0;
};

// In-memory phantom -> anchors -> represent pipeline.
std::vector<SubjectRepresentation> phantom_cohort(const CohortOptions& options);

}  // namespace abfr
