#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ipt/tensor.hpp"

namespace ipt {

/// H x W x 3 interleaved image, float pixels nominally in [0,1]. Values
/// outside [0,1] may appear in intermediate math; load/save clamp.
struct ImageBuffer {
  std::int64_t height = 0;
  std::int64_t width = 0;
  static constexpr int channels = 3;
  std::vector<double> pixels;  // row-major, interleaved RGB
  std::string source_id;

  ImageBuffer() = default;
  ImageBuffer(std::int64_t h, std::int64_t w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h * w * channels), fill) {}

  double& at(std::int64_t y, std::int64_t x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  double at(std::int64_t y, std::int64_t x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::int64_t pixel_count() const { return height * width; }
};

ImageBuffer load_image(const std::string& path);
void save_image(const ImageBuffer& img, const std::string& path);

ImageBuffer clamp01(const ImageBuffer& img);

/// [1,3,H,W] tensor from an image and back.
Tensor image_to_tensor(const ImageBuffer& img);
ImageBuffer tensor_to_image(const Tensor& t);

/// Tiling plan: origins at stride P - overlap, final origin clamped to the
/// border so the union covers every pixel. Origins are deduplicated.
struct PatchGrid {
  std::int64_t patch_size = 48;
  std::int64_t overlap = 10;
  std::int64_t source_height = 0;
  std::int64_t source_width = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> origins;  // (row, col)

  /// Grid with all origins, the patch size, and extents multiplied by k
  /// (used when merging super-resolved patches).
  PatchGrid scaled(std::int64_t k) const;
};

std::vector<std::int64_t> tile_origins(std::int64_t extent, std::int64_t patch,
                                       std::int64_t overlap);

PatchGrid plan_patches(std::int64_t height, std::int64_t width, std::int64_t patch = 48,
                       std::int64_t overlap = 10);

std::pair<PatchGrid, std::vector<ImageBuffer>> extract_patches(const ImageBuffer& img,
                                                               std::int64_t patch = 48,
                                                               std::int64_t overlap = 10);

/// Per-pixel arithmetic mean over all covering patches. Exact identity when
/// all covering patches agree.
ImageBuffer merge_patches(const PatchGrid& grid, const std::vector<ImageBuffer>& patches);

/// 20*log10(1/sqrt(MSE)) on [0,1] data; +inf for identical inputs.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
/// PSNR after rounding both images to 8-bit codes.
double psnr_quantized(const ImageBuffer& a, const ImageBuffer& b);

/// Mean local SSIM over sliding windows, averaged across channels.
double ssim(const ImageBuffer& a, const ImageBuffer& b, int window = 8, double k1 = 0.01,
            double k2 = 0.03);

}  // namespace ipt
