#pragma once

#include <cstdint>

#include "stmbr/dataset.hpp"

namespace stmbr {

/// Synthetic lung phantom: two elliptical "lungs" on a dark background;
/// infected samples carry soft-edged elliptical lesions in the GGO intensity
/// band with exact binary masks. Output is a pure function of the spec.
struct PhantomSpec {
  uint64_t seed = 0;
  int count = 200;
  int size = 64;
  double infected_fraction = 0.5;
  int min_lesions = 1;
  int max_lesions = 4;
  double lesion_lo = 0.45, lesion_hi = 0.75;
  double lung_lo = 0.05, lung_hi = 0.25;
  double noise_sigma = 0.03;
};

SampleSet gen_phantoms(const PhantomSpec& spec);

}  // namespace stmbr
