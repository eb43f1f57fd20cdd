#include <algorithm>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "ipt/degrade.hpp"
#include "ipt/rng.hpp"

namespace ipt {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetManifest synthesize_dataset(const std::string& clean_dir,
                                   const std::vector<DegradationSpec>& specs,
                                   const std::string& out_dir, std::uint64_t global_seed) {
  if (specs.empty()) throw ContractError("synthesize_dataset: no degradation specs");
  std::vector<fs::path> clean_files;
  for (const auto& entry : fs::directory_iterator(clean_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      clean_files.push_back(entry.path());
    }
  }
  std::sort(clean_files.begin(), clean_files.end());
  if (clean_files.empty()) {
    throw IoError("synthesize_dataset: no PNG files in " + clean_dir);
  }

  fs::create_directories(fs::path(out_dir) / "corrupted");
  fs::create_directories(fs::path(out_dir) / "clean");

  DatasetManifest manifest;
  manifest.rng_algorithm = Rng::kAlgorithm;
  manifest.base_dir = fs::path(out_dir);

  for (std::size_t idx = 0; idx < clean_files.size(); ++idx) {
    ImageBuffer clean;
    try {
      clean = load_image(clean_files[idx].string());
    } catch (const IoError& e) {
      std::cerr << "warning: skipping unreadable input: " << e.what() << "\n";
      continue;
    }
    const std::string stem = clean_files[idx].stem().string();
    const std::string clean_rel = "clean/" + stem + ".png";
    save_image(clean, (manifest.base_dir / clean_rel).string());
    for (const DegradationSpec& spec : specs) {
      const std::uint64_t seed = derive_seed(global_seed, idx, spec.task_id);
      ImageBuffer corrupted = apply_degradation(spec, clean, seed);
      const std::string corrupted_rel = "corrupted/" + stem + "_" + spec.task_id + ".png";
      save_image(corrupted, (manifest.base_dir / corrupted_rel).string());
      manifest.entries.push_back(ManifestEntry{clean_rel, corrupted_rel, spec.task_id, seed});
    }
  }
  if (manifest.entries.empty()) {
    throw IoError("synthesize_dataset: no entries produced from " + clean_dir);
  }
  save_manifest(manifest, manifest.base_dir / "manifest.json");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json doc;
  doc["version"] = manifest.version;
  doc["rng_algorithm"] = manifest.rng_algorithm;
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"clean_path", e.clean_path},
                       {"corrupted_path", e.corrupted_path},
                       {"task_id", e.task_id},
                       {"seed", e.seed}});
  }
  doc["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << doc.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  manifest.version = doc.at("version").get<int>();
  manifest.rng_algorithm = doc.at("rng_algorithm").get<std::string>();
  for (const auto& e : doc.at("entries")) {
    ManifestEntry entry;
    entry.clean_path = e.at("clean_path").get<std::string>();
    entry.corrupted_path = e.at("corrupted_path").get<std::string>();
    entry.task_id = e.at("task_id").get<std::string>();
    entry.seed = e.at("seed").get<std::uint64_t>();
    if (!fs::exists(manifest.resolve(entry.clean_path))) {
      throw IoError("manifest references missing file: " +
                    manifest.resolve(entry.clean_path).string());
    }
    if (!fs::exists(manifest.resolve(entry.corrupted_path))) {
      throw IoError("manifest references missing file: " +
                    manifest.resolve(entry.corrupted_path).string());
    }
    spec_for_task(entry.task_id);  // rejects unknown task ids
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

}  // namespace ipt
