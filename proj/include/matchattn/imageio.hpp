#pragma once

#include <string>

#include "matchattn/tensor.hpp"

namespace matchattn {

// PFM: "Pf" (1 channel) or "PF" (3 channels), ASCII width/height, scale line
// whose sign gives endianness (negative = little-endian, which is what we
// write), then rows of F32 samples ordered bottom-to-top.
void write_pfm(const std::string& path, const Tensor<float>& img);  // [H,W] or [H,W,1|3]
Tensor<float> read_pfm(const std::string& path);                    // [H,W,1] or [H,W,3]

// Optical-flow file: magic F32 202021.25 ("PIEH"), i32 LE width/height, then
// interleaved F32 (u, v) row-major top-to-bottom.
void write_flo(const std::string& path, const Tensor<float>& flow);  // [H,W,2]
Tensor<float> read_flo(const std::string& path);

// Binary PPM (P6) / PGM (P5), maxval 255. Float images in [0,1] are quantized.
void write_ppm(const std::string& path, const Tensor<float>& img);  // [H,W,3]
Tensor<float> read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor<uint8_t>& img);  // [H,W]
Tensor<uint8_t> read_pgm(const std::string& path);

}  // namespace matchattn
