#pragma once

// 8-bit RGB PNG reading and writing through libpng.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "raster.hpp"

namespace clens {

struct DecodedImage {
  int width = 0;
  int height = 0;
  std::vector<double> hwc;  // values in [0, 1]
};

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

inline void png_write_to_buffer(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.insert(buf->bytes.end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

[[noreturn]] inline void png_error_throw(png_structp, png_const_charp msg) { throw InputError(std::string("png: ") + msg); }

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

// Encode an HWC [0,1] buffer (any width/height) as PNG bytes.
inline std::vector<std::uint8_t> encode_png(const std::vector<double>& hwc, int width, int height) {
  if (static_cast<std::size_t>(width) * height * kChannels != hwc.size()) throw InputError("png: bad buffer size");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_throw,
                                            detail::png_warning_ignore);
  png_infop info = png_create_info_struct(png);
  detail::PngWriteBuffer buf;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * kChannels);
  try {
    png_set_write_fn(png, &buf, detail::png_write_to_buffer, detail::png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
      for (std::size_t i = 0; i < row.size(); ++i)
        row[i] = detail::to_byte(hwc[static_cast<std::size_t>(y) * row.size() + i]);
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return std::move(buf.bytes);
}

inline std::vector<std::uint8_t> encode_png(const Image& img) { return encode_png(img.data, img.size, img.size); }

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), std::fclose);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw InputError("short write to '" + path.string() + "'");
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_bytes(path, encode_png(img)); }

inline void write_png(const std::filesystem::path& path, const std::vector<double>& hwc, int width, int height) {
  write_bytes(path, encode_png(hwc, width, height));
}

inline DecodedImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw InputError("cannot read png '" + path.string() + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    throw InputError("cannot decode png '" + path.string() + "': " + image.message);
  }
  DecodedImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.hwc.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out.hwc[i] = bytes[i] / 255.0;
  return out;
}

// Load any PNG and bilinearly resize it to a square raster in [0, 1].
inline Image load_image(const std::filesystem::path& path, int resolution) {
  auto d = read_png(path);
  if (d.width == resolution && d.height == resolution) {
    Image img(resolution);
    img.data = std::move(d.hwc);
    return img;
  }
  Image img = resize_bilinear(d.hwc, d.height, d.width, resolution);
  for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace clens
