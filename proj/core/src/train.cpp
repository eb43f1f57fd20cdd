#include "ipt/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "ipt/losses.hpp"
#include "ipt/ops.hpp"

namespace ipt {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (decay_epoch >= epochs) throw ConfigError("decay_epoch must be < epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (lambda > 0.0 && batch_size < 2) {
    throw ConfigError("contrastive loss needs batch_size >= 2 when lambda > 0");
  }
  if (crop < 1) throw ConfigError("crop must be positive");
}

TrainDataset TrainDataset::load(const DatasetManifest& manifest,
                                const std::vector<std::string>& task_filter,
                                std::int64_t crop) {
  auto wanted = [&](const std::string& id) {
    if (task_filter.empty()) return true;
    for (const auto& t : task_filter) {
      if (t == id) return true;
    }
    return false;
  };
  TrainDataset data;
  for (const ManifestEntry& e : manifest.entries) {
    if (!wanted(e.task_id)) continue;
    ImageBuffer clean = load_image(manifest.resolve(e.clean_path).string());
    if (clean.height < crop || clean.width < crop) continue;  // crop would not fit
    ImageBuffer corrupted = load_image(manifest.resolve(e.corrupted_path).string());
    data.by_task[e.task_id].push_back(TrainExample{std::move(corrupted), std::move(clean)});
  }
  return data;
}

std::vector<std::string> TrainDataset::task_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, entries] : by_task) {
    if (!entries.empty()) ids.push_back(id);
  }
  return ids;
}

TaskBatch sample_task_batch(const TrainDataset& data, std::int64_t crop, int batch_size,
                            Rng& rng) {
  const std::vector<std::string> ids = data.task_ids();
  if (ids.empty()) throw ContractError("sample_task_batch: no usable training entries");
  const std::string& task_id = ids[rng.next_below(ids.size())];
  const auto& pool = data.by_task.at(task_id);

  const TaskSpec spec = TaskSpec::from_id(task_id);
  const std::int64_t k = spec.scale;
  if (crop % k != 0) {
    throw ContractError("crop " + std::to_string(crop) + " not divisible by scale " +
                        std::to_string(k));
  }
  const std::int64_t pc = crop / k;  // corrupted-side crop

  TaskBatch batch;
  batch.task_id = task_id;
  batch.corrupted = Tensor({batch_size, 3, pc, pc});
  batch.clean = Tensor({batch_size, 3, crop, crop});
  double* cor = batch.corrupted.mut();
  double* cln = batch.clean.mut();
  for (int b = 0; b < batch_size; ++b) {
    const TrainExample& ex = pool[rng.next_below(pool.size())];
    if (ex.corrupted.height < pc || ex.corrupted.width < pc) {
      throw ContractError("corrupted image smaller than its crop for task " + task_id);
    }
    const std::int64_t cy = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(ex.corrupted.height - pc + 1)));
    const std::int64_t cx = static_cast<std::int64_t>(
        rng.next_below(static_cast<std::uint64_t>(ex.corrupted.width - pc + 1)));
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < pc; ++y) {
        for (std::int64_t x = 0; x < pc; ++x) {
          cor[((b * 3 + c) * pc + y) * pc + x] = ex.corrupted.at(cy + y, cx + x, c);
        }
      }
      for (std::int64_t y = 0; y < crop; ++y) {
        for (std::int64_t x = 0; x < crop; ++x) {
          cln[((b * 3 + c) * crop + y) * crop + x] = ex.clean.at(cy * k + y, cx * k + x, c);
        }
      }
    }
  }
  return batch;
}

namespace {

struct Trainer {
  IptModel& model;
  AdamState& opt;
  double lambda;
  std::vector<Tensor*> params;

  Trainer(IptModel& m, AdamState& o, double l) : model(m), opt(o), lambda(l) {
    model.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
    if (opt.first_moment.empty()) opt = make_adam_state(params);
  }

  StepRecord step(const TaskBatch& batch, double lr) {
    Tape tape;
    for (Tensor* p : params) tape.watch(*p);
    IptModel::ForwardResult fwd = model.forward_with_features(batch.corrupted, batch.task_id);
    Tensor sup = supervised_l1(fwd.output, batch.clean);
    Tensor con = lambda > 0.0 ? contrastive_loss(fwd.decoder_tokens) : Tensor::scalar(0.0);
    LossBreakdown loss = total_loss(sup, con, lambda);
    tape.backward(loss.total);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Tensor* p : params) grads.push_back(tape.grad(*p));
    adam_step(params, grads, opt, lr);
    return StepRecord{batch.task_id, sup.item(), con.item(), loss.total.item()};
  }
};

void append_metrics(const fs::path& out_dir, int epoch, double lr,
                    const std::map<std::string, int>& task_counts, double sup, double con,
                    double total) {
  if (out_dir.empty()) return;
  std::ofstream log(out_dir / "metrics.jsonl", std::ios::app);
  json line{{"epoch", epoch},   {"lr", lr},   {"task_counts", task_counts},
            {"sup", sup},       {"con", con}, {"total", total}};
  log << line.dump() << "\n";
}

Checkpoint run_training(IptModel model, const TrainDataset& data, const TrainConfig& cfg,
                        double lambda, double lr_initial, double lr_after_decay, int epochs,
                        int decay_epoch, const std::string& manifest_hash,
                        std::vector<StepRecord>* trajectory) {
  if (data.task_ids().empty()) {
    throw ContractError("training: no task has usable entries");
  }
  std::int64_t usable = 0;
  for (const auto& [id, entries] : data.by_task) usable += static_cast<std::int64_t>(entries.size());
  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : static_cast<int>((usable + cfg.batch_size - 1) / cfg.batch_size);

  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.manifest_hash = manifest_hash;
  Trainer trainer(ckpt.model, ckpt.opt, lambda);
  Rng rng(derive_seed(cfg.seed, 17, "train"));

  bool stop = false;
  std::int64_t step_index = 0;
  for (int epoch = 0; epoch < epochs && !stop; ++epoch) {
    const double lr = epoch < decay_epoch ? lr_initial : lr_after_decay;
    std::map<std::string, int> task_counts;
    double sup_sum = 0.0, con_sum = 0.0, total_sum = 0.0;
    int steps_done = 0;
    for (int s = 0; s < steps_per_epoch; ++s, ++step_index) {
      TaskBatch batch = sample_task_batch(data, cfg.crop, cfg.batch_size, rng);
      StepRecord rec = trainer.step(batch, lr);
      if (!std::isfinite(rec.total)) {
        throw ContractError("non-finite loss at step " + std::to_string(step_index) +
                            " (task " + rec.task_id + "); aborting");
      }
      if (trajectory) trajectory->push_back(rec);
      ++task_counts[rec.task_id];
      sup_sum += rec.supervised;
      con_sum += rec.contrastive;
      total_sum += rec.total;
      ++steps_done;
      if (cfg.early_stop_l1 > 0.0 && rec.supervised < cfg.early_stop_l1) {
        stop = true;
        break;
      }
    }
    ckpt.epoch = epoch + 1;
    ckpt.rng_state = rng.state();
    append_metrics(cfg.out_dir, epoch, lr, task_counts, sup_sum / steps_done,
                   con_sum / steps_done, total_sum / steps_done);
    if (!cfg.out_dir.empty()) {
      save_checkpoint(ckpt, cfg.out_dir / ("ckpt_epoch_" + std::to_string(epoch) + ".iptc"));
    }
  }
  if (!cfg.out_dir.empty()) save_checkpoint(ckpt, cfg.out_dir / "ckpt_final.iptc");
  return ckpt;
}

std::string manifest_file_hash(const DatasetManifest& manifest) {
  const fs::path file = manifest.base_dir / "manifest.json";
  return fs::exists(file) ? file_hash(file) : std::string();
}

}  // namespace

Checkpoint pretrain(const DatasetManifest& manifest, const ModelConfig& model_config,
                    const TrainConfig& cfg, std::vector<StepRecord>* trajectory) {
  cfg.validate();
  TrainDataset data = TrainDataset::load(manifest, cfg.task_filter, cfg.crop);
  IptModel model = IptModel::init(model_config, cfg.seed);
  return run_training(std::move(model), data, cfg, cfg.lambda, cfg.lr_initial,
                      cfg.lr_after_decay, cfg.epochs, cfg.decay_epoch,
                      manifest_file_hash(manifest), trajectory);
}

Checkpoint finetune(const Checkpoint& ckpt, const std::string& task_id,
                    const DatasetManifest& manifest, const TrainConfig& cfg,
                    std::vector<StepRecord>* trajectory) {
  cfg.validate();
  if (!ckpt.model.has_task(task_id)) {
    throw LookupError("finetune: checkpoint has no task '" + task_id + "'");
  }
  IptModel model = ckpt.model.retain_task(task_id);
  TrainDataset data = TrainDataset::load(manifest, {task_id}, cfg.crop);
  // Fresh optimizer: the dropped parameters invalidate the stored moments.
  return run_training(std::move(model), data, cfg, cfg.finetune_lambda, cfg.finetune_lr,
                      cfg.finetune_lr, cfg.finetune_epochs,
                      std::max(0, cfg.finetune_epochs - 1), manifest_file_hash(manifest),
                      trajectory);
}

}  // namespace ipt
