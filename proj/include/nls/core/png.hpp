#pragma once

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nls/core/error.hpp"
#include "nls/core/image.hpp"

namespace nls::png {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Writes rows of `channels`-byte pixels. `palette` non-empty selects an
// indexed-colour image with 1 byte per pixel.
inline void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                       std::span<const std::uint8_t> data, std::size_t row_bytes,
                       std::span<const std::array<std::uint8_t, 3>> palette = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> colors;
  if (!palette.empty()) {
    for (const auto& c : palette) colors.push_back(png_color{c[0], c[1], c[2]});
    png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
  }
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

inline Decoded read_raw(const std::filesystem::path& path) {
  FilePtr file = open(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unreadable PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_png(png, info, PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING, nullptr);
  Decoded out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.color_type = png_get_color_type(png, info);
  out.channels = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  const std::size_t row_bytes = static_cast<std::size_t>(out.width) * out.channels;
  out.data.resize(row_bytes * out.height);
  for (int y = 0; y < out.height; ++y) {
    std::copy(rows[y], rows[y] + row_bytes, out.data.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace detail

inline void write_rgb(const std::filesystem::path& path, const Image& image) {
  detail::write_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, image.rgb,
                     static_cast<std::size_t>(image.width) * 3);
}

inline void write_gray(const std::filesystem::path& path, const Plane<std::uint8_t>& plane) {
  detail::write_rows(path, plane.width, plane.height, PNG_COLOR_TYPE_GRAY, plane.values,
                     static_cast<std::size_t>(plane.width));
}

/// Indexed PNG: pixel bytes are palette indices (class ids).
inline void write_indexed(const std::filesystem::path& path, const ClassMap& map,
                          std::span<const std::array<std::uint8_t, 3>> palette) {
  detail::write_rows(path, map.width, map.height, PNG_COLOR_TYPE_PALETTE, map.values,
                     static_cast<std::size_t>(map.width), palette);
}

inline Image read_rgb(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  Image image(raw.width, raw.height);
  if (raw.color_type == PNG_COLOR_TYPE_RGB) {
    image.rgb = std::move(raw.data);
  } else if (raw.color_type == PNG_COLOR_TYPE_GRAY) {
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
      image.rgb[3 * i] = image.rgb[3 * i + 1] = image.rgb[3 * i + 2] = raw.data[i];
    }
  } else if (raw.color_type == PNG_COLOR_TYPE_RGBA) {
    for (std::size_t i = 0; i < raw.data.size() / 4; ++i) {
      for (int c = 0; c < 3; ++c) image.rgb[3 * i + c] = raw.data[4 * i + c];
    }
  } else {
    throw FormatError("unsupported PNG colour type in " + path.string());
  }
  return image;
}

inline ClassMap read_indexed(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (raw.channels != 1) throw FormatError("expected single-channel PNG: " + path.string());
  ClassMap map(raw.width, raw.height);
  map.values = std::move(raw.data);
  return map;
}

}  // namespace nls::png
