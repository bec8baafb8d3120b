#pragma once

#include <string>

#include "ccam/metrics.hpp"
#include "ccam/tensor.hpp"

namespace ccam {

// (3,H,W) in [0,1] <-> 8-bit RGB
void write_png_rgb(const std::string& path, const Tensor& image);
Tensor read_png_rgb(const std::string& path);

// (H,W) in [0,1] <-> 8-bit grayscale
void write_png_gray(const std::string& path, const Tensor& map);
Tensor read_png_gray(const std::string& path);

// masks are stored as 0/255 grayscale
void write_png_mask(const std::string& path, const BinaryMask& mask);
BinaryMask read_png_mask(const std::string& path);

// float32 container: magic "CCAMRAW1", u32 ndim, u32 dims[], C-order float32
// payload, all little-endian
void write_raw_map(const std::string& path, const Tensor& map);
Tensor read_raw_map(const std::string& path);

}  // namespace ccam
