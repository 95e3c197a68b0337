#include "structnerf/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace structnerf {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

void write_png(const std::string& path, int width, int height, int color_type, int bit_depth,
               const std::vector<png_byte>& rows, std::size_t row_bytes) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * row_bytes);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb(const std::string& path, const Image& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("write_png_rgb expects 3 channels");
  std::vector<png_byte> rows(rgb.data.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i] = static_cast<png_byte>(std::lround(std::clamp(rgb.data[i], 0.0, 1.0) * 255.0));
  write_png(path, rgb.width, rgb.height, PNG_COLOR_TYPE_RGB, 8, rows, static_cast<std::size_t>(rgb.width) * 3);
}

void write_png_depth16(const std::string& path, const Image& depth, double scale) {
  if (depth.channels != 1) throw std::invalid_argument("write_png_depth16 expects 1 channel");
  std::vector<png_byte> rows(depth.data.size() * 2);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const double v = std::clamp(std::round(depth.data[i] * scale), 0.0, 65535.0);
    const auto q = static_cast<std::uint16_t>(v);
    rows[2 * i] = static_cast<png_byte>(q >> 8);  // PNG stores 16-bit samples big-endian
    rows[2 * i + 1] = static_cast<png_byte>(q & 0xff);
  }
  write_png(path, depth.width, depth.height, PNG_COLOR_TYPE_GRAY, 16, rows, static_cast<std::size_t>(depth.width) * 2);
}

Image read_png_rgb(const std::string& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading PNG " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = rows[y][3 * x + c] / 255.0;
  return img;
}

void write_pfm(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("PFM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << (image.channels == 3 ? "PF" : "Pf") << '\n' << image.width << ' ' << image.height << '\n' << "-1.0" << '\n';
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(image.at(x, y, c)));
        const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                               static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
        out.write(bytes, 4);
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string kind;
  int width = 0;
  int height = 0;
  double scale = 0.0;
  in >> kind >> width >> height >> scale;
  in.get();  // single whitespace byte before the payload
  if ((kind != "PF" && kind != "Pf") || width <= 0 || height <= 0 || scale == 0.0)
    throw std::runtime_error("malformed PFM header in " + path);
  const bool little = scale < 0.0;
  Image img(width, height, kind == "PF" ? 3 : 1);
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated PFM " + path);
        const std::uint32_t bits = little ? (b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24)
                                          : (b[3] | b[2] << 8 | b[1] << 16 | static_cast<std::uint32_t>(b[0]) << 24);
        img.at(x, y, c) = std::bit_cast<float>(bits);
      }
    }
  }
  return img;
}

}  // namespace structnerf
