#include <algorithm>
#include <cmath>
#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "ipt/degrade.hpp"
#include "ipt/image.hpp"
#include "ipt/rng.hpp"

using namespace ipt;
using ipt::testing::TempDir;

TEST_SUITE_BEGIN("degrade");

TEST_CASE("task id parsing") {
  DegradationSpec sr = spec_for_task("sr3");
  CHECK(sr.kind == TaskKind::SuperResolution);
  CHECK(sr.scale == 3);
  DegradationSpec noise = spec_for_task("noise70");
  CHECK(noise.kind == TaskKind::Denoise);
  CHECK(noise.sigma == 70.0);
  CHECK(spec_for_task("rain").kind == TaskKind::Derain);
  CHECK_THROWS_AS(spec_for_task("sr9"), ConfigError);
  CHECK_THROWS_AS(spec_for_task("bogus"), ConfigError);
}

TEST_CASE("bicubic reproduces constants everywhere") {
  ImageBuffer img(12, 16, 0.37);
  for (auto [num, den] : {std::pair{1, 2}, {1, 3}, {2, 1}, {3, 1}}) {
    ImageBuffer out = bicubic_resize(img, num, den);
    CHECK(out.height == 12 * num / den);
    for (double p : out.pixels) CHECK(std::abs(p - 0.37) < 1e-9);
  }
}

TEST_CASE("bicubic reproduces a linear ramp in the interior") {
  ImageBuffer img(16, 16);
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.02 + 0.05 * x;
    }
  }
  ImageBuffer half = bicubic_resize(img, 1, 2);
  // Keys kernel reproduces degree-1 polynomials; borders are clamped so only
  // check columns whose 4-tap support stays inside.
  for (std::int64_t y = 2; y < half.height - 2; ++y) {
    for (std::int64_t x = 2; x < half.width - 2; ++x) {
      const double src_x = (x + 0.5) * 2.0 - 0.5;  // half-pixel center mapping
      CHECK(std::abs(half.at(y, x, 0) - (0.02 + 0.05 * src_x)) < 1e-6);
    }
  }
}

TEST_CASE("gaussian noise passes a KS test at alpha=0.01") {
  ImageBuffer img(183, 183, 0.5);  // ~1e5 samples per channel
  const double sigma = 30.0;
  ImageBuffer noisy = add_gaussian_noise(img, sigma, 99);
  std::vector<double> z;
  z.reserve(100489);
  for (std::size_t i = 0; i < noisy.pixels.size(); i += 3) {
    z.push_back((noisy.pixels[i] - 0.5) * 255.0 / sigma);
  }
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
    ks = std::max(ks, std::abs(cdf - (i + 1) / n));
    ks = std::max(ks, std::abs(cdf - i / n));
  }
  CHECK(ks < 1.628 / std::sqrt(n));  // K-S critical value at alpha = 0.01
}

TEST_CASE("sigma-50 corruption of mid-gray lands at the textbook PSNR") {
  ImageBuffer img(128, 128, 0.5);
  ImageBuffer noisy = add_gaussian_noise(img, 50.0, 7);
  // 20*log10(255/50) = 14.15 dB
  CHECK(psnr(img, noisy) == doctest::Approx(14.15).epsilon(0.01));
}

TEST_CASE("noise is unclamped and seed-deterministic") {
  ImageBuffer img(8, 8, 0.98);
  ImageBuffer a = add_gaussian_noise(img, 50.0, 3);
  ImageBuffer b = add_gaussian_noise(img, 50.0, 3);
  CHECK(a.pixels == b.pixels);
  CHECK(*std::max_element(a.pixels.begin(), a.pixels.end()) > 1.0);  // not clipped
  ImageBuffer c = add_gaussian_noise(img, 50.0, 4);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("rain adds brightness, stays in range, and is deterministic") {
  ImageBuffer img(32, 32, 0.3);
  RainParams p;
  ImageBuffer a = add_rain_streaks(img, p, 11);
  ImageBuffer b = add_rain_streaks(img, p, 11);
  CHECK(a.pixels == b.pixels);
  double added = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    CHECK(a.pixels[i] >= img.pixels[i] - 1e-12);  // streaks only brighten
    CHECK(a.pixels[i] <= 1.0 + 1e-12);
    added += a.pixels[i] - img.pixels[i];
  }
  CHECK(added > 0.0);
}

TEST_CASE("apply_degradation dispatches by kind") {
  ImageBuffer img(24, 24, 0.5);
  CHECK(apply_degradation(spec_for_task("sr2"), img, 1).height == 12);
  CHECK(apply_degradation(spec_for_task("noise30"), img, 1).height == 24);
  CHECK(apply_degradation(spec_for_task("rain"), img, 1).height == 24);
}

TEST_CASE("synthesize_dataset writes a loadable, deterministic manifest") {
  TempDir tmp("synth");
  std::filesystem::create_directories(tmp.path / "clean_src");
  Rng rng(55);
  for (int i = 0; i < 2; ++i) {
    ImageBuffer img(20, 20);
    for (double& p : img.pixels) p = rng.next_uniform();
    save_image(img, (tmp.path / "clean_src" / ("i" + std::to_string(i) + ".png")).string());
  }
  const std::vector<DegradationSpec> specs{spec_for_task("sr2"), spec_for_task("noise30")};
  DatasetManifest m1 = synthesize_dataset((tmp.path / "clean_src").string(), specs,
                                          (tmp.path / "out1").string(), 123);
  CHECK(m1.entries.size() == 4);
  CHECK(m1.rng_algorithm == "splitmix64");

  DatasetManifest loaded = load_manifest(tmp.path / "out1" / "manifest.json");
  CHECK(loaded.entries.size() == 4);
  CHECK(loaded.entries[0].task_id == m1.entries[0].task_id);
  CHECK(loaded.entries[0].seed == m1.entries[0].seed);

  // Byte-determinism: a second run with the same seed produces identical PNGs.
  synthesize_dataset((tmp.path / "clean_src").string(), specs, (tmp.path / "out2").string(), 123);
  for (const auto& e : m1.entries) {
    std::ifstream f1(tmp.path / "out1" / e.corrupted_path, std::ios::binary);
    std::ifstream f2(tmp.path / "out2" / e.corrupted_path, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    CHECK_FALSE(b1.empty());
  }
}

TEST_CASE("load_manifest rejects missing files and malformed json") {
  TempDir tmp("badmanifest");
  CHECK_THROWS_AS(load_manifest(tmp.path / "missing.json"), IoError);
  std::ofstream(tmp.path / "broken.json") << "{not json";
  CHECK_THROWS_AS(load_manifest(tmp.path / "broken.json"), IoError);
  std::ofstream(tmp.path / "dangling.json")
      << R"({"version":1,"rng_algorithm":"splitmix64","entries":[)"
      << R"({"clean_path":"gone.png","corrupted_path":"gone2.png","task_id":"noise30","seed":1}]})";
  CHECK_THROWS_AS(load_manifest(tmp.path / "dangling.json"), IoError);
}

TEST_SUITE_END();
