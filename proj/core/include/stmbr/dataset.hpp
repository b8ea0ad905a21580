#pragma once

#include <string>

#include "stmbr/tensor.hpp"

namespace stmbr {

/// One CT slice: image in [0,1], optional binary mask, class label
/// (0 = healthy, 1 = infected).
struct Sample {
  std::string id;
  Tensor<float> image;   // (1, H, W)
  Tensor<uint8_t> mask;  // (H, W), values {0,1}; empty when absent
  int label = 0;
};

struct SampleSet {
  int height = 0;
  int width = 0;
  std::vector<Sample> samples;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct Splits {
  SampleSet train, val, test;
};

/// Deterministic stratified hold-out split. The train pool keeps
/// floor((1 - test_ratio) * N) samples and the test set receives the
/// remainder, apportioned across classes by largest remainder; the
/// validation set is carved from the pool the same way.
Splits split_dataset(const SampleSet& all, double test_ratio, double val_ratio, uint64_t seed);

/// On-disk dataset layout: images/<id>.pgm, masks/<id>.pgm, labels.csv
/// ("id,label" header). Also accepts a NIfTI layout: volume .nii(.gz) files
/// plus slices.csv ("id,volume,slice,label").
void save_dataset(const SampleSet& set, const std::string& dir);
SampleSet load_dataset(const std::string& dir);

}  // namespace stmbr
