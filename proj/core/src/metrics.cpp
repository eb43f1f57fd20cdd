#include <cmath>
#include <limits>

#include "ipt/image.hpp"

namespace ipt {

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError(std::string(what) + ": image extents disagree, " +
                        std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                        std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "psnr");
  double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

double psnr_quantized(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "psnr");
  auto quantize = [](const ImageBuffer& img) {
    ImageBuffer q = img;
    for (double& v : q.pixels) {
      double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      v = std::floor(c * 255.0 + 0.5) / 255.0;
    }
    return q;
  };
  return psnr(quantize(a), quantize(b));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, int window, double k1, double k2) {
  require_same_shape(a, b, "ssim");
  if (a.height < window || a.width < window) {
    throw ContractError("ssim: image smaller than window");
  }
  const double c1 = k1 * k1;  // dynamic range 1
  const double c2 = k2 * k2;
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  std::int64_t count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::int64_t y = 0; y + window <= a.height; ++y) {
      for (std::int64_t x = 0; x + window <= a.width; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int wy = 0; wy < window; ++wy) {
          for (int wx = 0; wx < window; ++wx) {
            double va = a.at(y + wy, x + wx, ch);
            double vb = b.at(y + wy, x + wx, ch);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        double mu_a = sa / n, mu_b = sb / n;
        double var_a = saa / n - mu_a * mu_a;
        double var_b = sbb / n - mu_b * mu_b;
        double cov = sab / n - mu_a * mu_b;
        double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace ipt
