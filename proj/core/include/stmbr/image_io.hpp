#pragma once

#include <string>

#include "stmbr/tensor.hpp"

namespace stmbr {

/// Binary PGM (P5, maxval 255). Masks write foreground as 255.
void write_mask_pgm(const Tensor<uint8_t>& mask, const std::string& path);

/// Gray image in [0,1] quantized to 8 bits.
void write_image_pgm(const Tensor<float>& image, const std::string& path);

/// Reads a P5 PGM into a (1,H,W) float tensor scaled to [0,1].
Tensor<float> read_pgm(const std::string& path, Tensor<uint8_t>* raw = nullptr);

/// Binary PPM (P6) blending red at 50% opacity over mask-foreground pixels.
void write_overlay_ppm(const Tensor<float>& image, const Tensor<uint8_t>& mask,
                       const std::string& path);

}  // namespace stmbr
