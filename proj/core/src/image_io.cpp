#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "ipt/errors.hpp"
#include "ipt/image.hpp"

namespace ipt {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageBuffer load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed reading " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed reading " + path);
  }
  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG stream: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_RGB || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("expected 8-bit RGB PNG: " + path);
  }

  raw.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBuffer img(static_cast<std::int64_t>(h), static_cast<std::int64_t>(w));
  img.source_id = path;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  }
  return img;
}

void save_image(const ImageBuffer& img, const std::string& path) {
  if (img.height < 1 || img.width < 1) {
    throw ContractError("save_image: empty image for " + path);
  }
  // Atomic write: render to a sibling temp file, then rename.
  const std::string tmp = path + ".tmp";
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot write image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed writing " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw IoError("libpng init failed writing " + path);
    }
    std::vector<png_byte> raw(static_cast<std::size_t>(img.height) * img.width * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    // Clamp, then round half-up to the nearest 8-bit code.
    for (std::size_t i = 0; i < raw.size(); ++i) {
      double v = img.pixels[i];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      raw[i] = static_cast<png_byte>(std::floor(v * 255.0 + 0.5));
    }
    for (std::int64_t y = 0; y < img.height; ++y) {
      rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * img.width * 3;
    }
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move temp file into place for " + path + ": " + ec.message());
}

}  // namespace ipt
