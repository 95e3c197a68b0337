#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace structnerf {

/// Row-major, interleaved-channel image of doubles. Colors live in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

// 8-bit RGB PNG. Values are clamped to [0,1] and rounded.
void write_png_rgb(const std::string& path, const Image& rgb);
Image read_png_rgb(const std::string& path);

/// 16-bit grayscale PNG with value = round(depth * scale), clamped to 65535.
constexpr double kDepthPreviewScale = 1000.0;  // millimetres per world unit
void write_png_depth16(const std::string& path, const Image& depth, double scale = kDepthPreviewScale);

// Portable float map. Single-channel ("Pf") or RGB ("PF"), little-endian
// (scale -1), rows stored bottom-to-top as the format requires.
void write_pfm(const std::string& path, const Image& image);
Image read_pfm(const std::string& path);

}  // namespace structnerf
