#pragma once

#include <filesystem>
#include <string>

#include "ipt/model.hpp"
#include "ipt/nn.hpp"

namespace ipt {

/// Everything needed to resume or evaluate a training run.
struct Checkpoint {
  IptModel model;
  AdamState opt;            // moments in for_each_param order; empty = fresh
  std::int64_t epoch = 0;
  std::uint64_t rng_state = 0;
  std::string manifest_hash;
};

/// Single binary container: magic, little-endian header length, JSON header
/// (version, config, tensor directory), then raw float64 payloads. Saving a
/// loaded checkpoint reproduces the file byte for byte.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the file bytes, as a hex string (report provenance).
std::string file_hash(const std::filesystem::path& path);

}  // namespace ipt
