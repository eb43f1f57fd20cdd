#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ipt/image.hpp"
#include "ipt/model.hpp"

namespace ipt {

struct EvalSettings {
  std::int64_t tile = 48;
  std::int64_t overlap = 10;
  bool self_ensemble = false;
  std::uint64_t eval_seed = 0x1beef;  // fixes on-the-fly corruption
};

struct ImageScore {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string task_id;
  std::string dataset;
  std::vector<ImageScore> images;
  double mean_psnr = 0.0;  // arithmetic mean of per-image values
  double mean_ssim = 0.0;
  std::string checkpoint_hash;
  EvalSettings settings;
};

/// Tiled restoration: 48-pixel tiles with 10-pixel overlap, merged by
/// per-pixel mean; inputs smaller than a tile are edge-padded and the output
/// cropped back. SR outputs use the grid rescaled by the task's factor.
ImageBuffer restore_image(const IptModel& model, const std::string& task_id,
                          const ImageBuffer& corrupted, const EvalSettings& settings = {});

using RestoreFn = std::function<ImageBuffer(const ImageBuffer& corrupted)>;

/// Applies `restore` under all 8 dihedral transforms of the input and
/// averages the back-transformed outputs.
ImageBuffer dihedral_ensemble(const RestoreFn& restore, const ImageBuffer& corrupted);

ImageBuffer self_ensemble_infer(const IptModel& model, const std::string& task_id,
                                const ImageBuffer& corrupted, const EvalSettings& settings = {});

/// Pipeline core with a pluggable restorer (tests can pass an identity stub).
/// eval_dir either mirrors the dataset layout (clean/ + corrupted/) or holds
/// clean PNGs directly, in which case corruption is synthesized with seeds
/// derived from settings.eval_seed.
EvalReport evaluate_with(const RestoreFn& restore, const std::string& task_id,
                         const std::string& eval_dir, const EvalSettings& settings);

EvalReport evaluate(const IptModel& model, const std::string& task_id,
                    const std::string& eval_dir, const EvalSettings& settings = {},
                    const std::string& checkpoint_hash = {});

/// Unseen-noise-level protocol: corrupts the clean images at each sigma and
/// routes through the nearest trained denoising head/tail.
std::vector<EvalReport> generalization_eval(const IptModel& model,
                                            const std::vector<double>& sigmas,
                                            const std::string& eval_dir,
                                            const EvalSettings& settings = {});

/// Which denoising task serves an arbitrary sigma (nearest trained level).
std::string route_sigma(const IptModel& model, double sigma);

/// Grayscale cosine-similarity heatmaps: position_embeddings.png plus one
/// task_<id>.png per task. Linear map, similarity -1 -> 0, +1 -> 255.
void viz_embeddings(const IptModel& model, const std::filesystem::path& out_dir);

/// Row-major n x n cosine-similarity matrix of the rows of a [n, d] tensor.
std::vector<double> cosine_similarity_matrix(const Tensor& rows);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
std::string report_table(const EvalReport& report);

}  // namespace ipt
