#pragma once

#include <string>
#include <vector>

namespace reclab {

/// Interleaved RGB image with values in [0,1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // (y * width + x) * 3 + c

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// Axis-aligned box in pixel coordinates; (x, y) is the top-left corner.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

/// 8-bit RGB PNG. Values are quantized with round-to-nearest.
void write_png(const std::string& path, const RgbImage& image);
RgbImage read_png(const std::string& path);

}  // namespace reclab
