#pragma once

#include <string>

#include "mcn/tensor.hpp"

namespace mcn {

// Binary PGM (P5) / PPM (P6), 8-bit, maxval 255. Values map linearly from
// [-1, 1] to [0, 255]; reading inverts the same mapping, so tensors already
// on the 8-bit grid round-trip bitwise.

void write_pgm(const std::string& path, const Tensor& image);  // [1,H,W] or [H,W]
Tensor read_pgm(const std::string& path);                      // -> [1,H,W] f32

// Grayscale mosaic of a [N,1,H,W] batch, written as P6 with r=g=b.
void write_ppm_grid(const std::string& path, const Tensor& batch, int cols);

}  // namespace mcn
