#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ipt/image.hpp"

namespace ipt {

enum class TaskKind { SuperResolution, Denoise, Derain };

std::string task_kind_name(TaskKind k);

/// Rain streak layer parameters. The generating method of the cited prior
/// work is not public; this is an explicit parameterized stand-in with
/// near-vertical defaults.
struct RainParams {
  double angle_deg = 90.0;    // streak direction; +-10 deg jitter applied per streak
  double length_px = 20.0;
  double width_px = 1.0;
  double density = 0.02;      // fraction of pixels seeding streaks
  double intensity = 0.3;     // additive brightness per streak pixel
};

/// One corruption recipe: kind plus its kind-specific parameters.
struct DegradationSpec {
  std::string task_id;        // "sr2".."sr4", "noise30", "noise50", "noiseNN", "rain"
  TaskKind kind = TaskKind::Denoise;
  int scale = 1;              // SR downsampling factor
  double sigma = 0.0;         // Gaussian sigma on the 0-255 scale
  RainParams rain;
};

/// Parses a task id like "sr3", "noise70" or "rain" into a spec.
DegradationSpec spec_for_task(const std::string& task_id);

/// Separable bicubic resampling (Keys kernel a=-0.5, half-pixel centers).
/// Output extents are floor(extent * num / den).
ImageBuffer bicubic_resize(const ImageBuffer& img, std::int64_t num, std::int64_t den);

/// i.i.d. N(0, (sigma/255)^2) noise per sample; NOT clamped so training
/// pairs keep the exact noise. Clamp separately for metric reporting.
ImageBuffer add_gaussian_noise(const ImageBuffer& img, double sigma_255, std::uint64_t seed);

ImageBuffer add_rain_streaks(const ImageBuffer& img, const RainParams& p, std::uint64_t seed);

/// Applies the spec's corruption to a clean image.
ImageBuffer apply_degradation(const DegradationSpec& spec, const ImageBuffer& clean,
                              std::uint64_t seed);

struct ManifestEntry {
  std::string clean_path;      // relative to the manifest file
  std::string corrupted_path;  // relative to the manifest file
  std::string task_id;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int version = 1;
  std::string rng_algorithm;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory holding the manifest file

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

/// Corrupts every clean PNG under clean_dir with every spec, writing PNGs and
/// manifest.json under out_dir. Per-entry seeds are derived from
/// (global_seed, image index, task id).
DatasetManifest synthesize_dataset(const std::string& clean_dir,
                                   const std::vector<DegradationSpec>& specs,
                                   const std::string& out_dir, std::uint64_t global_seed);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Loads and validates that every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace ipt
