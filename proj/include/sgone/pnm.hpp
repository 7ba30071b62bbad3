#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sgone/mask.hpp"
#include "sgone/tensor.hpp"

// Minimal netpbm codecs: PPM (P6 binary / P3 ascii) for images and PGM
// (P5 / P2) for masks, 8-bit samples. Parse errors report the byte offset.
namespace sgone {

struct RgbImage {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> data;  // rgb interleaved, row-major
};

struct GrayImage {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> data;
};

RgbImage load_ppm(const std::filesystem::path& path);
GrayImage load_pgm(const std::filesystem::path& path);

void save_ppm(const std::filesystem::path& path, const RgbImage& img, bool ascii = false);
void save_pgm(const std::filesystem::path& path, const GrayImage& img, bool ascii = false);

// Image as [3, h, w] tensor with values in [0, 1].
DTensor load_image(const std::filesystem::path& path);
DTensor image_to_tensor(const RgbImage& img);
RgbImage tensor_to_image(const DTensor& t);

// Mask thresholded at sample > 127.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& m);

// Reflect padding on the bottom/right edges up to the next multiple.
DTensor pad_reflect_to_multiple(const DTensor& image, int multiple);
// Zero padding for masks so padded pixels never count as foreground.
Mask pad_zero_to_multiple(const Mask& m, int multiple);

}  // namespace sgone
