#pragma once

#include <cstdint>
#include <vector>

namespace sgone {

// Binary segmentation mask, row-major, values in {0,1}.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0)
      : h(height), w(width), data(static_cast<std::size_t>(height) * width, fill) {}

  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }

  std::int64_t foreground_count() const {
    std::int64_t n = 0;
    for (auto v : data) n += v;
    return n;
  }

  bool empty_foreground() const { return foreground_count() == 0; }

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.h == b.h && a.w == b.w && a.data == b.data;
  }
};

}  // namespace sgone
