#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ipt/checkpoint.hpp"
#include "ipt/degrade.hpp"
#include "ipt/model.hpp"
#include "ipt/rng.hpp"

namespace ipt {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr_initial = 5e-5;
  double lr_after_decay = 2e-5;
  int decay_epoch = 20;            // lr steps down at this epoch
  double lambda = 0.1;             // contrastive weight
  std::int64_t crop = 48;          // clean-side crop
  std::uint64_t seed = 0;
  std::vector<std::string> task_filter;  // empty = every task in the manifest
  int steps_per_epoch = 0;         // 0 -> ceil(usable entries / batch_size)
  double early_stop_l1 = 0.0;      // > 0: stop once supervised L1 drops below
  int finetune_epochs = 30;
  double finetune_lr = 2e-5;
  double finetune_lambda = 0.0;    // fine-tuning is single-task; off by default
  std::filesystem::path out_dir;   // empty = no checkpoints / metrics log

  void validate() const;
};

struct TrainExample {
  ImageBuffer corrupted, clean;
};

/// Manifest images loaded into memory and grouped by task. Entries whose
/// clean side is smaller than the crop are skipped.
struct TrainDataset {
  std::map<std::string, std::vector<TrainExample>> by_task;

  static TrainDataset load(const DatasetManifest& manifest,
                           const std::vector<std::string>& task_filter, std::int64_t crop);
  std::vector<std::string> task_ids() const;
};

struct TaskBatch {
  std::string task_id;
  Tensor corrupted;  // [B, 3, crop/k, crop/k]
  Tensor clean;      // [B, 3, crop, crop]
};

/// Uniform task choice among non-empty tasks, then uniform entry sampling
/// with replacement and paired random crops (corrupted side divided by the
/// task's scale).
TaskBatch sample_task_batch(const TrainDataset& data, std::int64_t crop, int batch_size,
                            Rng& rng);

struct StepRecord {
  std::string task_id;
  double supervised = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

/// Multi-task pre-training. Writes metrics.jsonl and per-epoch checkpoints
/// under cfg.out_dir when set; optionally records the per-step trajectory.
Checkpoint pretrain(const DatasetManifest& manifest, const ModelConfig& model_config,
                    const TrainConfig& cfg, std::vector<StepRecord>* trajectory = nullptr);

/// Drops every head/tail/task-embedding except task_id, then trains the
/// remaining parameters supervised-only at the fine-tuning rate.
Checkpoint finetune(const Checkpoint& ckpt, const std::string& task_id,
                    const DatasetManifest& manifest, const TrainConfig& cfg,
                    std::vector<StepRecord>* trajectory = nullptr);

}  // namespace ipt
