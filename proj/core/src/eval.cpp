#include "ipt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>
#include <png.h>

#include "ipt/degrade.hpp"
#include "ipt/rng.hpp"

namespace ipt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Edge-replication pad to at least (min_h, min_w).
ImageBuffer pad_to(const ImageBuffer& img, std::int64_t min_h, std::int64_t min_w) {
  const std::int64_t h = std::max(img.height, min_h);
  const std::int64_t w = std::max(img.width, min_w);
  if (h == img.height && w == img.width) return img;
  ImageBuffer out(h, w);
  out.source_id = img.source_id;
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t sy = std::min(y, img.height - 1);
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t sx = std::min(x, img.width - 1);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

ImageBuffer crop(const ImageBuffer& img, std::int64_t h, std::int64_t w) {
  if (h == img.height && w == img.width) return img;
  ImageBuffer out(h, w);
  out.source_id = img.source_id;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
    }
  }
  return out;
}

/// Dihedral transform t in [0,8): optional horizontal flip then t%4
/// clockwise quarter turns.
ImageBuffer dihedral(const ImageBuffer& img, int t) {
  ImageBuffer cur = img;
  if (t >= 4) {
    ImageBuffer f(cur.height, cur.width);
    for (std::int64_t y = 0; y < cur.height; ++y) {
      for (std::int64_t x = 0; x < cur.width; ++x) {
        for (int c = 0; c < 3; ++c) f.at(y, x, c) = cur.at(y, cur.width - 1 - x, c);
      }
    }
    cur = std::move(f);
  }
  for (int r = 0; r < t % 4; ++r) {
    ImageBuffer rot(cur.width, cur.height);
    for (std::int64_t y = 0; y < cur.height; ++y) {
      for (std::int64_t x = 0; x < cur.width; ++x) {
        for (int c = 0; c < 3; ++c) rot.at(x, cur.height - 1 - y, c) = cur.at(y, x, c);
      }
    }
    cur = std::move(rot);
  }
  return cur;
}

ImageBuffer dihedral_inverse(const ImageBuffer& img, int t) {
  ImageBuffer cur = img;
  for (int r = 0; r < (4 - t % 4) % 4; ++r) {
    ImageBuffer rot(cur.width, cur.height);
    for (std::int64_t y = 0; y < cur.height; ++y) {
      for (std::int64_t x = 0; x < cur.width; ++x) {
        for (int c = 0; c < 3; ++c) rot.at(x, cur.height - 1 - y, c) = cur.at(y, x, c);
      }
    }
    cur = std::move(rot);
  }
  if (t >= 4) {
    ImageBuffer f(cur.height, cur.width);
    for (std::int64_t y = 0; y < cur.height; ++y) {
      for (std::int64_t x = 0; x < cur.width; ++x) {
        for (int c = 0; c < 3; ++c) f.at(y, x, c) = cur.at(y, cur.width - 1 - x, c);
      }
    }
    cur = std::move(f);
  }
  return cur;
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

void write_gray_png(const fs::path& path, std::int64_t n,
                    const std::vector<unsigned char>& bytes) {
  const std::string tmp = path.string() + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(n), static_cast<png_uint_32>(n), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < n; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * n));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  fs::rename(tmp, path);
}

}  // namespace

ImageBuffer restore_image(const IptModel& model, const std::string& task_id,
                          const ImageBuffer& corrupted, const EvalSettings& settings) {
  const std::int64_t k = model.task(task_id).scale;
  // The position table only covers crop-sized inputs, so never tile wider.
  const std::int64_t tile = std::min(settings.tile, model.config.crop);
  const std::int64_t overlap = std::min(settings.overlap, tile - 1);
  ImageBuffer padded = pad_to(corrupted, tile, tile);
  auto [grid, patches] = extract_patches(padded, tile, overlap);
  std::vector<ImageBuffer> restored;
  restored.reserve(patches.size());
  for (const ImageBuffer& p : patches) {
    restored.push_back(tensor_to_image(model.forward(image_to_tensor(p), task_id)));
  }
  ImageBuffer merged = merge_patches(grid.scaled(k), restored);
  return crop(merged, corrupted.height * k, corrupted.width * k);
}

ImageBuffer dihedral_ensemble(const RestoreFn& restore, const ImageBuffer& corrupted) {
  ImageBuffer acc;
  for (int t = 0; t < 8; ++t) {
    ImageBuffer out = dihedral_inverse(restore(dihedral(corrupted, t)), t);
    if (t == 0) {
      acc = std::move(out);
    } else {
      if (out.pixels.size() != acc.pixels.size()) {
        throw ContractError("dihedral_ensemble: transform outputs disagree in shape");
      }
      for (std::size_t i = 0; i < acc.pixels.size(); ++i) acc.pixels[i] += out.pixels[i];
    }
  }
  for (double& v : acc.pixels) v /= 8.0;
  return acc;
}

ImageBuffer self_ensemble_infer(const IptModel& model, const std::string& task_id,
                                const ImageBuffer& corrupted, const EvalSettings& settings) {
  return dihedral_ensemble(
      [&](const ImageBuffer& img) { return restore_image(model, task_id, img, settings); },
      corrupted);
}

EvalReport evaluate_with(const RestoreFn& restore, const std::string& task_id,
                         const std::string& eval_dir, const EvalSettings& settings) {
  const DegradationSpec spec = spec_for_task(task_id);
  EvalReport report;
  report.task_id = task_id;
  report.dataset = fs::path(eval_dir).filename().string();
  report.settings = settings;

  struct Pair {
    std::string id;
    ImageBuffer clean, corrupted;
  };
  std::vector<Pair> pairs;
  const fs::path root(eval_dir);
  if (fs::is_directory(root / "clean")) {
    for (const fs::path& clean_file : sorted_pngs(root / "clean")) {
      const std::string stem = clean_file.stem().string();
      const fs::path corrupted_file = root / "corrupted" / (stem + "_" + task_id + ".png");
      if (!fs::exists(corrupted_file)) {
        std::cerr << "warning: no corrupted pair for " << clean_file << ", skipped\n";
        continue;
      }
      pairs.push_back(
          {stem, load_image(clean_file.string()), load_image(corrupted_file.string())});
    }
  } else {
    const auto files = sorted_pngs(root);
    for (std::size_t idx = 0; idx < files.size(); ++idx) {
      ImageBuffer clean = load_image(files[idx].string());
      ImageBuffer corrupted =
          apply_degradation(spec, clean, derive_seed(settings.eval_seed, idx, task_id));
      pairs.push_back({files[idx].stem().string(), std::move(clean), std::move(corrupted)});
    }
  }
  if (pairs.empty()) throw IoError("evaluate: no usable images in " + eval_dir);

  for (Pair& p : pairs) {
    ImageBuffer out = clamp01(restore(p.corrupted));
    // SR extents can lose a remainder pixel to the downscale floor.
    const std::int64_t h = std::min(out.height, p.clean.height);
    const std::int64_t w = std::min(out.width, p.clean.width);
    ImageBuffer ref = crop(p.clean, h, w);
    out = crop(out, h, w);
    report.images.push_back(ImageScore{p.id, psnr(out, ref), ssim(out, ref)});
  }
  for (const ImageScore& s : report.images) {
    report.mean_psnr += s.psnr;
    report.mean_ssim += s.ssim;
  }
  report.mean_psnr /= static_cast<double>(report.images.size());
  report.mean_ssim /= static_cast<double>(report.images.size());
  return report;
}

EvalReport evaluate(const IptModel& model, const std::string& task_id,
                    const std::string& eval_dir, const EvalSettings& settings,
                    const std::string& checkpoint_hash) {
  RestoreFn restore = [&](const ImageBuffer& corrupted) {
    return settings.self_ensemble ? self_ensemble_infer(model, task_id, corrupted, settings)
                                  : restore_image(model, task_id, corrupted, settings);
  };
  EvalReport report = evaluate_with(restore, task_id, eval_dir, settings);
  report.checkpoint_hash = checkpoint_hash;
  return report;
}

std::string route_sigma(const IptModel& model, double sigma) {
  const TaskSpec* best = nullptr;
  for (const TaskSpec& t : model.config.tasks) {
    if (t.kind != TaskKind::Denoise) continue;
    if (!best || std::abs(t.sigma - sigma) < std::abs(best->sigma - sigma) ||
        (std::abs(t.sigma - sigma) == std::abs(best->sigma - sigma) && t.sigma < best->sigma)) {
      best = &t;
    }
  }
  if (!best) throw LookupError("no denoising task available to serve sigma");
  return best->id;
}

std::vector<EvalReport> generalization_eval(const IptModel& model,
                                            const std::vector<double>& sigmas,
                                            const std::string& eval_dir,
                                            const EvalSettings& settings) {
  std::vector<EvalReport> reports;
  for (double sigma : sigmas) {
    const std::string routed = route_sigma(model, sigma);
    const std::string tag = "noise" + std::to_string(static_cast<int>(std::llround(sigma)));
    const DegradationSpec spec = spec_for_task(tag);

    const fs::path root(eval_dir);
    const fs::path clean_dir = fs::is_directory(root / "clean") ? root / "clean" : root;
    const auto files = sorted_pngs(clean_dir);
    if (files.empty()) throw IoError("generalization_eval: no clean images in " + eval_dir);

    EvalReport report;
    report.task_id = routed;
    report.dataset = fs::path(eval_dir).filename().string() + " sigma=" + tag.substr(5);
    report.settings = settings;
    for (std::size_t idx = 0; idx < files.size(); ++idx) {
      ImageBuffer clean = load_image(files[idx].string());
      ImageBuffer corrupted =
          apply_degradation(spec, clean, derive_seed(settings.eval_seed, idx, tag));
      ImageBuffer out = clamp01(settings.self_ensemble
                                    ? self_ensemble_infer(model, routed, corrupted, settings)
                                    : restore_image(model, routed, corrupted, settings));
      report.images.push_back(
          ImageScore{files[idx].stem().string(), psnr(out, clean), ssim(out, clean)});
    }
    for (const ImageScore& s : report.images) {
      report.mean_psnr += s.psnr;
      report.mean_ssim += s.ssim;
    }
    report.mean_psnr /= static_cast<double>(report.images.size());
    report.mean_ssim /= static_cast<double>(report.images.size());
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<double> cosine_similarity_matrix(const Tensor& rows) {
  if (rows.rank() != 2) throw DimensionError("cosine_similarity_matrix expects [n,d]");
  const std::int64_t n = rows.dim(0), d = rows.dim(1);
  const double* p = rows.data();
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += p[i * d + j] * p[i * d + j];
    norms[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  std::vector<double> sim(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < d; ++c) dot += p[i * d + c] * p[j * d + c];
      sim[static_cast<std::size_t>(i * n + j)] =
          dot / (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)]);
    }
  }
  return sim;
}

void viz_embeddings(const IptModel& model, const std::filesystem::path& out_dir) {
  fs::create_directories(out_dir);
  auto render = [&](const Tensor& rows, const fs::path& path) {
    const std::int64_t n = rows.dim(0);
    const std::vector<double> sim = cosine_similarity_matrix(rows);
    std::vector<unsigned char> bytes(sim.size());
    for (std::size_t i = 0; i < sim.size(); ++i) {
      const double v = std::clamp((sim[i] + 1.0) * 0.5, 0.0, 1.0);
      bytes[i] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
    }
    write_gray_png(path, n, bytes);
  };
  render(model.position_embeddings, out_dir / "position_embeddings.png");
  for (std::size_t t = 0; t < model.config.tasks.size(); ++t) {
    render(model.task_embeddings[t], out_dir / ("task_" + model.config.tasks[t].id + ".png"));
  }
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  json images = json::array();
  for (const ImageScore& s : report.images) {
    images.push_back({{"id", s.id}, {"psnr", s.psnr}, {"ssim", s.ssim}});
  }
  json doc{{"task_id", report.task_id},
           {"dataset", report.dataset},
           {"images", std::move(images)},
           {"mean_psnr", report.mean_psnr},
           {"mean_ssim", report.mean_ssim},
           {"checkpoint_hash", report.checkpoint_hash},
           {"settings",
            {{"tile", report.settings.tile},
             {"overlap", report.settings.overlap},
             {"self_ensemble", report.settings.self_ensemble},
             {"eval_seed", report.settings.eval_seed}}}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << doc.dump(2) << "\n";
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "Task: " << report.task_id << "  Dataset: " << report.dataset;
  if (report.settings.self_ensemble) os << "  (self-ensemble)";
  os << "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-24s %10s %10s\n", "image", "PSNR", "SSIM");
  os << line;
  for (const ImageScore& s : report.images) {
    std::snprintf(line, sizeof line, "%-24s %10.2f %10.4f\n", s.id.c_str(), s.psnr, s.ssim);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-24s %10.2f %10.4f\n", "mean", report.mean_psnr,
                report.mean_ssim);
  os << line;
  return os.str();
}

}  // namespace ipt
