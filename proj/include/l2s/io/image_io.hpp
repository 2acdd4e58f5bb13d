#pragma once

#include <string>

#include "l2s/core/view.hpp"

namespace l2s::io {

// 8-bit RGB image files. Saving quantizes to the 8-bit grid (round-half-up),
// loading maps v/255 back, so quantized images round-trip exactly.

void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

void save_ppm(const std::string& path, const Image& img);
Image load_ppm(const std::string& path);

// Dispatch on extension (.png, .ppm).
void save_image(const std::string& path, const Image& img);
Image load_image(const std::string& path);

}  // namespace l2s::io
