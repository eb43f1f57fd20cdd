// Command-line front end: dataset synthesis, pre-training, fine-tuning,
// evaluation, single-image inference, and embedding visualization.
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ipt/checkpoint.hpp"
#include "ipt/eval.hpp"
#include "ipt/train.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ModelFlags {
  std::int64_t channels = 8;
  std::int64_t patch = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  bool paper_scale = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--channels", channels, "feature channels C");
    cmd->add_option("--patch", patch, "feature patch size P");
    cmd->add_option("--enc-layers", enc_layers, "encoder layers");
    cmd->add_option("--dec-layers", dec_layers, "decoder layers");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_flag("--paper-scale", paper_scale, "use the full-size configuration");
  }

  ipt::ModelConfig build(const std::vector<std::string>& task_ids) const {
    std::vector<ipt::TaskSpec> tasks;
    for (const auto& id : task_ids) tasks.push_back(ipt::TaskSpec::from_id(id));
    if (paper_scale) return ipt::paper_config(std::move(tasks));
    ipt::ModelConfig c = ipt::desk_config(std::move(tasks));
    c.channels = channels;
    c.patch = patch;
    c.num_encoder_layers = enc_layers;
    c.num_decoder_layers = dec_layers;
    c.num_heads = heads;
    return c;
  }
};

std::vector<std::string> manifest_task_ids(const ipt::DatasetManifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) {
    if (std::find(ids.begin(), ids.end(), e.task_id) == ids.end()) ids.push_back(e.task_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IPT: multi-task image restoration transformer"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "corrupt a directory of clean PNGs");
  std::string synth_clean, synth_out, synth_tasks = "sr2,sr3,sr4,noise30,noise50,rain";
  std::uint64_t synth_seed = 0;
  synth->add_option("--clean", synth_clean, "directory of clean PNGs")->required();
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--tasks", synth_tasks, "comma-separated task ids");
  synth->add_option("--seed", synth_seed, "global seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "multi-task pre-training");
  std::string pre_manifest, pre_out, pre_tasks;
  ipt::TrainConfig pre_cfg;
  ModelFlags pre_model;
  pre->add_option("--manifest", pre_manifest, "manifest.json path")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--epochs", pre_cfg.epochs);
  pre->add_option("--batch", pre_cfg.batch_size);
  pre->add_option("--decay-epoch", pre_cfg.decay_epoch);
  pre->add_option("--lambda", pre_cfg.lambda, "contrastive weight");
  pre->add_option("--seed", pre_cfg.seed);
  pre->add_option("--steps-per-epoch", pre_cfg.steps_per_epoch);
  pre->add_option("--crop", pre_cfg.crop, "training crop (clean side)");
  pre->add_option("--tasks", pre_tasks, "restrict to these tasks (comma-separated)");
  pre_model.attach(pre);

  // finetune
  auto* fine = app.add_subcommand("finetune", "single-task fine-tuning with head/tail dropping");
  std::string fine_ckpt, fine_task, fine_manifest, fine_out;
  ipt::TrainConfig fine_cfg;
  fine->add_option("--ckpt", fine_ckpt, "pre-trained checkpoint")->required();
  fine->add_option("--task", fine_task, "task id to retain")->required();
  fine->add_option("--manifest", fine_manifest, "manifest.json path")->required();
  fine->add_option("--out", fine_out, "output directory")->required();
  fine->add_option("--epochs", fine_cfg.finetune_epochs);
  fine->add_option("--lr", fine_cfg.finetune_lr);
  fine->add_option("--seed", fine_cfg.seed);
  fine->add_option("--steps-per-epoch", fine_cfg.steps_per_epoch);
  fine->add_option("--crop", fine_cfg.crop, "training crop (clean side)");

  // eval
  auto* ev = app.add_subcommand("eval", "tiled PSNR/SSIM evaluation");
  std::string ev_ckpt, ev_task, ev_data, ev_report;
  std::string ev_sigmas;
  ipt::EvalSettings ev_settings;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--task", ev_task, "task id");
  ev->add_option("--data", ev_data, "eval directory")->required();
  ev->add_option("--report", ev_report, "write JSON report here");
  ev->add_option("--sigmas", ev_sigmas, "generalization mode: comma-separated noise levels");
  ev->add_option("--seed", ev_settings.eval_seed, "on-the-fly corruption seed");
  ev->add_flag("--ensemble", ev_settings.self_ensemble, "self-ensemble (8 dihedral transforms)");

  // infer
  auto* inf = app.add_subcommand("infer", "restore one image");
  std::string inf_ckpt, inf_task, inf_in, inf_out;
  bool inf_ensemble = false;
  inf->add_option("--ckpt", inf_ckpt, "checkpoint path")->required();
  inf->add_option("--task", inf_task, "task id")->required();
  inf->add_option("--in", inf_in, "input PNG")->required();
  inf->add_option("--out", inf_out, "output PNG")->required();
  inf->add_flag("--ensemble", inf_ensemble, "self-ensemble (8 dihedral transforms)");

  // viz
  auto* viz = app.add_subcommand("viz", "embedding similarity heatmaps");
  std::string viz_ckpt, viz_out;
  viz->add_option("--ckpt", viz_ckpt, "checkpoint path")->required();
  viz->add_option("--out", viz_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 1;
  }

  try {
    if (*synth) {
      std::vector<ipt::DegradationSpec> specs;
      for (const auto& id : split_csv(synth_tasks)) specs.push_back(ipt::spec_for_task(id));
      ipt::DatasetManifest m = ipt::synthesize_dataset(synth_clean, specs, synth_out, synth_seed);
      std::cout << "wrote " << m.entries.size() << " entries to " << synth_out << "\n";
    } else if (*pre) {
      ipt::DatasetManifest manifest = ipt::load_manifest(pre_manifest);
      pre_cfg.task_filter = split_csv(pre_tasks);
      pre_cfg.out_dir = pre_out;
      const auto ids =
          pre_cfg.task_filter.empty() ? manifest_task_ids(manifest) : pre_cfg.task_filter;
      ipt::ModelConfig mcfg = pre_model.build(ids);
      mcfg.crop = pre_cfg.crop;  // position table sized to the training crop
      ipt::Checkpoint ckpt = ipt::pretrain(manifest, mcfg, pre_cfg);
      std::cout << "pre-trained " << ckpt.model.parameter_count() << " parameters, checkpoint in "
                << pre_out << "\n";
    } else if (*fine) {
      ipt::Checkpoint ckpt = ipt::load_checkpoint(fine_ckpt);
      ipt::DatasetManifest manifest = ipt::load_manifest(fine_manifest);
      fine_cfg.out_dir = fine_out;
      fine_cfg.lambda = 0.0;
      fine_cfg.decay_epoch = 0;
      fine_cfg.epochs = 1;  // unused by finetune; keeps validate() happy
      ipt::Checkpoint out = ipt::finetune(ckpt, fine_task, manifest, fine_cfg);
      std::cout << "fine-tuned on " << fine_task << ": " << out.model.parameter_count()
                << " parameters, checkpoint in " << fine_out << "\n";
    } else if (*ev) {
      ipt::Checkpoint ckpt = ipt::load_checkpoint(ev_ckpt);
      if (!ev_sigmas.empty()) {
        std::vector<double> sigmas;
        for (const auto& s : split_csv(ev_sigmas)) sigmas.push_back(std::stod(s));
        auto reports = ipt::generalization_eval(ckpt.model, sigmas, ev_data, ev_settings);
        for (const auto& r : reports) std::cout << ipt::report_table(r) << "\n";
        if (!ev_report.empty() && !reports.empty()) {
          ipt::write_report_json(reports.front(), ev_report);
        }
      } else {
        if (ev_task.empty()) {
          std::cerr << "--task is required unless --sigmas is given\n";
          return 1;
        }
        ipt::EvalReport report =
            ipt::evaluate(ckpt.model, ev_task, ev_data, ev_settings, ipt::file_hash(ev_ckpt));
        std::cout << ipt::report_table(report);
        if (!ev_report.empty()) ipt::write_report_json(report, ev_report);
      }
    } else if (*inf) {
      ipt::Checkpoint ckpt = ipt::load_checkpoint(inf_ckpt);
      ipt::ImageBuffer img = ipt::load_image(inf_in);
      ipt::EvalSettings settings;
      ipt::ImageBuffer out = inf_ensemble
                                 ? ipt::self_ensemble_infer(ckpt.model, inf_task, img, settings)
                                 : ipt::restore_image(ckpt.model, inf_task, img, settings);
      ipt::save_image(out, inf_out);
      std::cout << "wrote " << inf_out << " (" << out.width << "x" << out.height << ")\n";
    } else if (*viz) {
      ipt::Checkpoint ckpt = ipt::load_checkpoint(viz_ckpt);
      ipt::viz_embeddings(ckpt.model, viz_out);
      std::cout << "wrote heatmaps to " << viz_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
