#include "ipt/degrade.hpp"

#include <algorithm>
#include <cmath>

#include "ipt/rng.hpp"

namespace ipt {

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::SuperResolution:
      return "sr";
    case TaskKind::Denoise:
      return "noise";
    case TaskKind::Derain:
      return "rain";
  }
  return "?";
}

DegradationSpec spec_for_task(const std::string& task_id) {
  DegradationSpec spec;
  spec.task_id = task_id;
  if (task_id.rfind("sr", 0) == 0 && task_id.size() == 3) {
    int scale = task_id[2] - '0';
    if (scale < 2 || scale > 4) {
      throw ConfigError("unsupported SR scale in task id '" + task_id + "'");
    }
    spec.kind = TaskKind::SuperResolution;
    spec.scale = scale;
    return spec;
  }
  if (task_id.rfind("noise", 0) == 0 && task_id.size() > 5) {
    double sigma = std::stod(task_id.substr(5));
    if (sigma <= 0.0) throw ConfigError("sigma must be positive in '" + task_id + "'");
    spec.kind = TaskKind::Denoise;
    spec.sigma = sigma;
    return spec;
  }
  if (task_id == "rain") {
    spec.kind = TaskKind::Derain;
    return spec;
  }
  throw ConfigError("unknown task id '" + task_id + "'");
}

namespace {

// Keys cubic kernel with a = -0.5.
double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

std::int64_t clamp_idx(std::int64_t i, std::int64_t n) {
  return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

// One separable pass along x (transpose==false) or conceptually the same
// routine is reused for y by swapping loop roles.
ImageBuffer resize_axis(const ImageBuffer& src, std::int64_t out_extent, bool horizontal) {
  ImageBuffer dst(horizontal ? src.height : out_extent, horizontal ? out_extent : src.width);
  dst.source_id = src.source_id;
  const std::int64_t in_extent = horizontal ? src.width : src.height;
  const double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
  const std::int64_t other = horizontal ? src.height : src.width;
  for (std::int64_t o = 0; o < out_extent; ++o) {
    const double center = scale * (static_cast<double>(o) + 0.5) - 0.5;
    const std::int64_t base = static_cast<std::int64_t>(std::floor(center)) - 1;
    double w[4];
    double wsum = 0.0;
    for (int t = 0; t < 4; ++t) {
      w[t] = cubic_weight(center - static_cast<double>(base + t));
      wsum += w[t];
    }
    for (int t = 0; t < 4; ++t) w[t] /= wsum;  // partition of unity at borders too
    for (std::int64_t j = 0; j < other; ++j) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) {
          std::int64_t idx = clamp_idx(base + t, in_extent);
          acc += w[t] * (horizontal ? src.at(j, idx, c) : src.at(idx, j, c));
        }
        if (horizontal) {
          dst.at(j, o, c) = acc;
        } else {
          dst.at(o, j, c) = acc;
        }
      }
    }
  }
  return dst;
}

}  // namespace

ImageBuffer bicubic_resize(const ImageBuffer& img, std::int64_t num, std::int64_t den) {
  if (num < 1 || den < 1) throw ContractError("bicubic_resize: non-positive scale");
  const std::int64_t oh = img.height * num / den;
  const std::int64_t ow = img.width * num / den;
  if (oh < 1 || ow < 1) {
    throw ContractError("bicubic_resize: degenerate output size for " +
                        std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  ImageBuffer tmp = resize_axis(img, ow, true);
  return resize_axis(tmp, oh, false);
}

ImageBuffer add_gaussian_noise(const ImageBuffer& img, double sigma_255, std::uint64_t seed) {
  if (sigma_255 <= 0.0) throw ContractError("add_gaussian_noise: sigma must be positive");
  const double sigma = sigma_255 / 255.0;
  Rng rng(seed);
  ImageBuffer out = img;
  for (double& v : out.pixels) v += sigma * rng.next_gauss();
  return out;
}

ImageBuffer add_rain_streaks(const ImageBuffer& img, const RainParams& p, std::uint64_t seed) {
  if (p.density <= 0.0 || p.density > 1.0) throw ContractError("rain density must be in (0,1]");
  if (p.intensity <= 0.0 || p.intensity > 1.0) throw ContractError("rain intensity must be in (0,1]");
  if (p.length_px < 1.0) throw ContractError("rain streak length must be >= 1");
  Rng rng(seed);
  const std::int64_t anchors = static_cast<std::int64_t>(
      std::ceil(p.density * static_cast<double>(img.pixel_count()) / p.length_px));
  std::vector<double> layer(img.pixels.size(), 0.0);
  const int half_w = static_cast<int>(std::floor((p.width_px - 1.0) / 2.0));
  for (std::int64_t a = 0; a < anchors; ++a) {
    const double x0 = rng.next_uniform() * static_cast<double>(img.width);
    const double y0 = rng.next_uniform() * static_cast<double>(img.height);
    const double angle = (p.angle_deg + rng.next_uniform(-10.0, 10.0)) * M_PI / 180.0;
    // 90 degrees falls straight down the image.
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    const int steps = static_cast<int>(std::ceil(p.length_px));
    for (int s = 0; s < steps; ++s) {
      const double px = x0 + dx * static_cast<double>(s);
      const double py = y0 + dy * static_cast<double>(s);
      for (int wofs = 0; wofs <= half_w * 2; ++wofs) {
        // Perpendicular width offsets.
        const double ox = -dy * static_cast<double>(wofs - half_w);
        const double oy = dx * static_cast<double>(wofs - half_w);
        const double sx = px + ox;
        const double sy = py + oy;
        // Anti-aliased bilinear splat.
        const std::int64_t ix = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t iy = static_cast<std::int64_t>(std::floor(sy));
        const double fx = sx - static_cast<double>(ix);
        const double fy = sy - static_cast<double>(iy);
        const double wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const std::int64_t xs[4] = {ix, ix + 1, ix, ix + 1};
        const std::int64_t ys[4] = {iy, iy, iy + 1, iy + 1};
        for (int t = 0; t < 4; ++t) {
          if (xs[t] < 0 || xs[t] >= img.width || ys[t] < 0 || ys[t] >= img.height) continue;
          std::size_t base = static_cast<std::size_t>((ys[t] * img.width + xs[t]) * 3);
          for (int c = 0; c < 3; ++c) {
            layer[base + static_cast<std::size_t>(c)] += p.intensity * wgt[t];
          }
        }
      }
    }
  }
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    double v = out.pixels[i] + layer[i];
    out.pixels[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return out;
}

ImageBuffer apply_degradation(const DegradationSpec& spec, const ImageBuffer& clean,
                              std::uint64_t seed) {
  switch (spec.kind) {
    case TaskKind::SuperResolution:
      return bicubic_resize(clean, 1, spec.scale);
    case TaskKind::Denoise:
      return add_gaussian_noise(clean, spec.sigma, seed);
    case TaskKind::Derain:
      return add_rain_streaks(clean, spec.rain, seed);
  }
  throw ConfigError("apply_degradation: unhandled kind");
}

}  // namespace ipt
