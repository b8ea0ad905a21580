#pragma once

#include <string>
#include <utility>

#include "stmbr/tensor.hpp"

namespace stmbr {

struct VolumeMeta {
  int nx = 0, ny = 0, nz = 0;
  int datatype = 0;  // NIfTI-1 code: 2=uint8, 4=int16, 16=float32
  double spacing[3] = {1, 1, 1};
  double scl_slope = 0, scl_inter = 0;
  bool big_endian = false;
};

/// Minimal NIfTI-1 reader. Accepts single-file "n+1" volumes and "ni1"
/// header/.img pairs, auto-detects byte order via sizeof_hdr, applies
/// scl_slope/scl_inter when the slope is nonzero, and returns the volume as
/// a (nz, 1, ny, nx) tensor normalized to [0,1] by the volume min-max.
/// ".nii.gz" works when built with zlib support.
std::pair<VolumeMeta, Tensor<float>> read_nifti(const std::string& path);

}  // namespace stmbr
