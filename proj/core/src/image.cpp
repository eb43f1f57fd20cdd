#include <algorithm>
#include <cstring>

#include "ipt/image.hpp"

namespace ipt {

ImageBuffer clamp01(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (double& v : out.pixels) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return out;
}

Tensor image_to_tensor(const ImageBuffer& img) {
  Tensor t({1, 3, img.height, img.width});
  double* p = t.mut();
  const std::int64_t hw = img.height * img.width;
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        p[c * hw + y * img.width + x] = img.at(y, x, c);
      }
    }
  }
  return t;
}

ImageBuffer tensor_to_image(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3) {
    throw DimensionError("tensor_to_image expects [1,3,H,W], got " + shape_str(t.shape()));
  }
  const std::int64_t h = t.dim(2), w = t.dim(3);
  ImageBuffer img(h, w);
  const double* p = t.data();
  const std::int64_t hw = h * w;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = p[c * hw + y * w + x];
      }
    }
  }
  return img;
}

std::vector<std::int64_t> tile_origins(std::int64_t extent, std::int64_t patch,
                                       std::int64_t overlap) {
  if (extent < patch) {
    throw ContractError("tile_origins: extent " + std::to_string(extent) +
                        " smaller than patch " + std::to_string(patch));
  }
  const std::int64_t stride = patch - overlap;
  if (stride < 1) throw ContractError("tile_origins: overlap >= patch");
  std::vector<std::int64_t> origins;
  for (std::int64_t o = 0; o + patch <= extent; o += stride) origins.push_back(o);
  if (origins.back() + patch < extent) origins.push_back(extent - patch);
  return origins;
}

PatchGrid plan_patches(std::int64_t height, std::int64_t width, std::int64_t patch,
                       std::int64_t overlap) {
  PatchGrid grid;
  grid.patch_size = patch;
  grid.overlap = overlap;
  grid.source_height = height;
  grid.source_width = width;
  auto rows = tile_origins(height, patch, overlap);
  auto cols = tile_origins(width, patch, overlap);
  for (auto r : rows) {
    for (auto c : cols) grid.origins.emplace_back(r, c);
  }
  return grid;
}

PatchGrid PatchGrid::scaled(std::int64_t k) const {
  PatchGrid g = *this;
  g.patch_size *= k;
  g.overlap *= k;
  g.source_height *= k;
  g.source_width *= k;
  for (auto& o : g.origins) {
    o.first *= k;
    o.second *= k;
  }
  return g;
}

std::pair<PatchGrid, std::vector<ImageBuffer>> extract_patches(const ImageBuffer& img,
                                                               std::int64_t patch,
                                                               std::int64_t overlap) {
  PatchGrid grid = plan_patches(img.height, img.width, patch, overlap);
  std::vector<ImageBuffer> patches;
  patches.reserve(grid.origins.size());
  for (const auto& [r, c] : grid.origins) {
    ImageBuffer p(patch, patch);
    p.source_id = img.source_id;
    for (std::int64_t y = 0; y < patch; ++y) {
      std::memcpy(&p.at(y, 0, 0), img.pixels.data() + ((r + y) * img.width + c) * 3,
                  static_cast<std::size_t>(patch) * 3 * sizeof(double));
    }
    patches.push_back(std::move(p));
  }
  return {std::move(grid), std::move(patches)};
}

ImageBuffer merge_patches(const PatchGrid& grid, const std::vector<ImageBuffer>& patches) {
  if (patches.size() != grid.origins.size()) {
    throw ContractError("merge_patches: " + std::to_string(patches.size()) +
                        " patches for " + std::to_string(grid.origins.size()) + " origins");
  }
  const std::int64_t P = grid.patch_size;
  for (const auto& p : patches) {
    if (p.height != P || p.width != P) {
      throw ContractError("merge_patches: patch extent " + std::to_string(p.height) + "x" +
                          std::to_string(p.width) + " vs grid patch size " + std::to_string(P));
    }
  }
  ImageBuffer out(grid.source_height, grid.source_width);
  // The mean is computed as first + sum(v - first)/count, which collapses to
  // the first value exactly when all covering patches agree, so an
  // extract/merge round trip is bit-identical.
  std::vector<double> diff_sum(out.pixels.size(), 0.0);
  std::vector<std::int32_t> counts(out.pixels.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& [r, c] = grid.origins[i];
    const ImageBuffer& p = patches[i];
    for (std::int64_t y = 0; y < P; ++y) {
      for (std::int64_t x = 0; x < P; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          std::size_t idx =
              static_cast<std::size_t>(((r + y) * out.width + (c + x)) * 3 + ch);
          double v = p.at(y, x, ch);
          if (counts[idx] == 0) {
            out.pixels[idx] = v;
          } else {
            diff_sum[idx] += v - out.pixels[idx];
          }
          counts[idx] += 1;
        }
      }
    }
  }
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (counts[i] > 1 && diff_sum[i] != 0.0) {
      out.pixels[i] += diff_sum[i] / static_cast<double>(counts[i]);
    }
  }
  return out;
}

}  // namespace ipt
