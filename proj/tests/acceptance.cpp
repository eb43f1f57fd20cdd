// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "ipt/checkpoint.hpp"
#include "ipt/degrade.hpp"
#include "ipt/eval.hpp"
#include "ipt/losses.hpp"
#include "ipt/model.hpp"
#include "ipt/ops.hpp"
#include "ipt/rng.hpp"
#include "ipt/train.hpp"

using namespace ipt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  if (!ok) ++g_failures;
}

double fd_max_rel_err(const std::function<Tensor(std::vector<Tensor>&)>& fn,
                      std::vector<Tensor> inputs, double eps = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    for (Tensor& in : inputs) tape.watch(in);
    Tensor loss = fn(inputs);
    tape.backward(loss);
    for (Tensor& in : inputs) analytic.push_back(tape.grad(in));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].size(); ++j) {
      auto eval = [&](double delta) {
        std::vector<Tensor> probe = inputs;
        probe[i].mut()[j] += delta;
        return fn(probe).item();
      };
      const double num = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double ana = analytic[i].data()[j];
      const double denom = std::max({std::abs(num), std::abs(ana), 1.0});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
  }
  return worst;
}

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / "ipt_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Smooth, learnable 48x48 images for the convergence oracle.
void write_oracle_images(const fs::path& dir, int count) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    ImageBuffer img(48, 48);
    for (std::int64_t y = 0; y < 48; ++y) {
      for (std::int64_t x = 0; x < 48; ++x) {
        for (int c = 0; c < 3; ++c) {
          img.at(y, x, c) =
              0.5 + 0.28 * std::sin(0.13 * (x + 3 * i) + 0.4 * c) * std::cos(0.11 * (y - 2 * i));
        }
      }
    }
    save_image(img, (dir / ("o" + std::to_string(i) + ".png")).string());
  }
}

ModelConfig desk(const std::vector<std::string>& ids) {
  std::vector<TaskSpec> tasks;
  for (const auto& id : ids) tasks.push_back(TaskSpec::from_id(id));
  return desk_config(std::move(tasks));
}

// ---------- criteria ----------

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  Tensor a = randn({2, 3}, rng), b = randn({3}, rng);
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) { return sum_all(mul(add(in[0], in[1]), sub(in[0], in[1]))); },
      {a, b}));
  Tensor pos = randn({4}, rng, 0.3, 1.5);
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) {
        return sum_all(mul(exp_t(neg(in[0])), log_t(sqrt_t(in[0]))));
      },
      {pos}));
  Tensor m1 = randn({2, 3}, rng), m2 = randn({3, 2}, rng);
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) { return sum_all(mul(matmul(in[0], in[1]), matmul(in[0], in[1]))); },
      {m1, m2}));
  Tensor sx = randn({2, 4}, rng), sw = randn({2, 4}, rng);
  track(fd_max_rel_err(
      [&](std::vector<Tensor>& in) { return sum_all(mul(softmax(in[0]), in[1])); }, {sx, sw}));
  Tensor g = randn({4}, rng, 0.5, 1.0), be = randn({4}, rng);
  track(fd_max_rel_err(
      [&](std::vector<Tensor>& in) {
        return sum_all(mul(layer_norm(in[0], in[1], in[2]), sw));
      },
      {sx, g, be}));
  Tensor img = randn({1, 2, 4, 4}, rng), w = randn({2, 2, 3, 3}, rng), bias = randn({2}, rng);
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) {
        return sum_all(mul(conv2d(in[0], in[1], in[2], 1, 1), conv2d(in[0], in[1], in[2], 1, 1)));
      },
      {img, w, bias}));
  Tensor sh = randn({1, 4, 2, 2}, rng);
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) {
        return sum_all(mul(pixel_shuffle(in[0], 2), pixel_shuffle(in[0], 2)));
      },
      {sh}));
  track(fd_max_rel_err(
      [](std::vector<Tensor>& in) { return sum_all(mul(patchify(in[0], 2), patchify(in[0], 2))); },
      {img}));

  // Full tiny IPT: P=2, C=4, 1+1 layers, one task, every parameter checked.
  ModelConfig cfg = desk({"sr2"});
  cfg.channels = 4;
  cfg.patch = 2;
  cfg.num_encoder_layers = 1;
  cfg.num_decoder_layers = 1;
  cfg.num_heads = 2;
  cfg.crop = 4;
  IptModel model = IptModel::init(cfg, 102);
  Tensor x = randn({1, 3, 4, 4}, rng, 0.1, 0.5);
  Tensor target = randn({1, 3, 8, 8}, rng, 0.1, 0.5);
  std::vector<Tensor*> params;
  model.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
  std::vector<Tensor> analytic;
  {
    Tape tape;
    for (Tensor* p : params) tape.watch(*p);
    Tensor loss = mean_all(mul(sub(model.forward(x, "sr2"), target),
                               sub(model.forward(x, "sr2"), target)));
    tape.backward(loss);
    for (Tensor* p : params) analytic.push_back(tape.grad(*p));
  }
  auto model_loss = [&]() {
    Tensor d = sub(model.forward(x, "sr2"), target);
    return mean_all(mul(d, d)).item();
  };
  Rng pick(103);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    // Two random elements per tensor keeps this inside the time budget while
    // touching every parameter tensor in the network.
    for (int trial = 0; trial < 2; ++trial) {
      const std::int64_t j = static_cast<std::int64_t>(pick.next_below(p->size()));
      const double eps = 1e-5, orig = p->data()[j];
      p->mut()[j] = orig + eps;
      const double hi = model_loss();
      p->mut()[j] = orig - eps;
      const double lo = model_loss();
      p->mut()[j] = orig;
      const double num = (hi - lo) / (2 * eps);
      const double ana = analytic[pi].data()[j];
      track(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1.0}));
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char detail[128];
  std::snprintf(detail, sizeof detail, "max relative error %.2e (limit 1e-4), %.1f s", worst,
                secs);
  report("gradient-suite", worst < 1e-4 && secs < 60.0, detail);
}

void criterion_shapes() {
  bool ok = true;
  std::string detail = "token/tail/tiling laws hold";
  ModelConfig cfg = desk({"noise30", "sr2", "sr3", "sr4"});
  cfg.crop = 16;
  cfg.patch = 2;
  cfg.channels = 4;
  cfg.num_encoder_layers = 1;
  cfg.num_decoder_layers = 1;
  IptModel m = IptModel::init(cfg, 111);
  Rng rng(112);
  Tensor tokens = randn({1, 16, cfg.token_dim()}, rng);
  ok &= m.encoder_forward(tokens).shape() == tokens.shape();
  ok &= m.decoder_forward(tokens, "noise30").shape() == tokens.shape();
  for (const std::string id : {"noise30", "sr2", "sr3", "sr4"}) {
    const std::int64_t k = m.task(id).scale;
    Tensor x = randn({1, 3, 8, 8}, rng, 0.1, 0.5);
    if (m.forward(x, id).shape() != Shape{1, 3, 8 * k, 8 * k}) {
      ok = false;
      detail = "tail scale law broken for " + id;
    }
  }
  Tensor f = randn({2, 4, 6, 8}, rng);
  Tensor back = depatchify(patchify(f, 2), 2, 6, 8);
  for (std::int64_t i = 0; i < f.size(); ++i) ok &= back.data()[i] == f.data()[i];

  ImageBuffer img(100, 58);
  for (double& p : img.pixels) p = rng.next_uniform();
  auto [grid, patches] = extract_patches(img, 48, 10);
  ok &= merge_patches(grid, patches).pixels == img.pixels;
  report("shape-contract-suite", ok, detail);
}

void criterion_losses() {
  Rng rng(121);
  Tensor f = randn({3, 4, 6}, rng);
  Tensor sup = Tensor::scalar(0.375);
  Tensor con = contrastive_loss(f);
  bool ok = std::abs(total_loss(sup, con, 0.1).total.item() - (0.1 * con.item() + 0.375)) < 1e-12;

  Tensor same({2, 2, 3}, std::vector<double>(12, 0.7));
  ok &= std::abs(contrastive_loss(same).item()) < 1e-9;
  Tensor ortho({2, 1, 2}, {1, 0, 0, 1});
  ok &= std::abs(contrastive_loss(ortho).item() + 1.0) < 1e-9;

  Tensor perm = f;
  double* p = perm.mut();
  for (std::int64_t i = 0; i < 24; ++i) std::swap(p[i], p[48 + i]);
  ok &= std::abs(contrastive_loss(perm).item() - con.item()) < 1e-12;
  ok &= std::abs(contrastive_loss(scale(f, 2.5)).item() - con.item()) < 1e-9;
  report("loss-arithmetic", ok, "Eq.6 identity, Eq.5 oracles, invariances");
}

void criterion_degradations() {
  bool ok = true;
  std::string detail;
  // KS at alpha=0.01 on ~1e5 draws
  ImageBuffer mid(183, 183, 0.5);
  ImageBuffer noisy = add_gaussian_noise(mid, 30.0, 131);
  std::vector<double> z;
  for (std::size_t i = 0; i < noisy.pixels.size(); i += 3) {
    z.push_back((noisy.pixels[i] - 0.5) * 255.0 / 30.0);
  }
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
    ks = std::max({ks, std::abs(cdf - (i + 1) / n), std::abs(cdf - i / n)});
  }
  ok &= ks < 1.628 / std::sqrt(n);

  ImageBuffer flat(12, 12, 0.6);
  for (double p : bicubic_resize(flat, 1, 2).pixels) ok &= std::abs(p - 0.6) < 1e-9;
  ImageBuffer ramp(16, 16);
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c) ramp.at(y, x, c) = 0.02 + 0.05 * x;
    }
  }
  ImageBuffer half = bicubic_resize(ramp, 1, 2);
  for (std::int64_t y = 2; y < half.height - 2; ++y) {
    for (std::int64_t x = 2; x < half.width - 2; ++x) {
      ok &= std::abs(half.at(y, x, 0) - (0.02 + 0.05 * ((x + 0.5) * 2.0 - 0.5))) < 1e-6;
    }
  }

  ImageBuffer gray(128, 128, 0.5);
  const double db = psnr(gray, add_gaussian_noise(gray, 50.0, 132));
  ok &= std::abs(db - 14.15) < 0.1;

  ImageBuffer r1 = add_rain_streaks(gray, RainParams{}, 133);
  ImageBuffer r2 = add_rain_streaks(gray, RainParams{}, 133);
  ok &= r1.pixels == r2.pixels;
  ImageBuffer n1 = add_gaussian_noise(gray, 30.0, 134);
  ImageBuffer n2 = add_gaussian_noise(gray, 30.0, 134);
  ok &= n1.pixels == n2.pixels;

  char buf[96];
  std::snprintf(buf, sizeof buf, "KS %.4f, sigma-50 PSNR %.3f dB", ks, db);
  report("degradation-oracles", ok, buf);
}

// Shared by the convergence and generalization criteria.
struct OracleRun {
  fs::path data_dir;
  Checkpoint ckpt;
  std::vector<StepRecord> steps;
  bool trained_ok = false;
};

OracleRun run_convergence_oracle(const fs::path& root) {
  OracleRun out;
  write_oracle_images(root / "clean", 8);
  DatasetManifest manifest = synthesize_dataset(
      (root / "clean").string(), {spec_for_task("noise30")}, (root / "data").string(), 140);
  out.data_dir = root / "data";

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.decay_epoch = 19;
  cfg.steps_per_epoch = 100;  // 2000 steps ceiling
  cfg.batch_size = 2;
  cfg.lambda = 0.1;
  cfg.crop = 48;
  cfg.seed = 141;
  cfg.lr_initial = 1e-3;  // overfit probe; the paper schedule is exercised elsewhere
  cfg.lr_after_decay = 1e-3;
  cfg.early_stop_l1 = 0.012;
  out.ckpt = pretrain(manifest, desk({"noise30"}), cfg, &out.steps);
  out.trained_ok = !out.steps.empty() && out.steps.back().supervised < 0.02;
  return out;
}

void criterion_convergence(OracleRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = run.trained_ok && run.steps.size() <= 2000;

  // Train-set PSNR through the full tiled eval pipeline.
  double mean_psnr = 0.0;
  if (ok) {
    EvalReport rep = evaluate(run.ckpt.model, "noise30", run.data_dir.string());
    mean_psnr = rep.mean_psnr;
    ok &= mean_psnr > 30.0;
  }

  // Same-seed determinism on a short rerun.
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.decay_epoch = 1;
  cfg.steps_per_epoch = 10;
  cfg.batch_size = 2;
  cfg.crop = 48;
  cfg.seed = 142;
  DatasetManifest manifest = load_manifest(run.data_dir / "manifest.json");
  std::vector<StepRecord> a, b;
  ModelConfig mcfg = desk({"noise30"});
  pretrain(manifest, mcfg, cfg, &a);
  pretrain(manifest, mcfg, cfg, &b);
  bool deterministic = a.size() == b.size();
  for (std::size_t i = 0; deterministic && i < a.size(); ++i) {
    deterministic = std::abs(a[i].total - b[i].total) <= 1e-12;
  }
  ok &= deterministic;

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "%zu steps, final L1 %.4f, train PSNR %.2f dB, deterministic=%d, +%.0f s",
                run.steps.size(), run.steps.empty() ? -1.0 : run.steps.back().supervised,
                mean_psnr, deterministic ? 1 : 0, secs);
  report("training-convergence", ok, detail);
}

void criterion_multitask(const fs::path& root) {
  write_oracle_images(root / "clean3", 4);
  DatasetManifest manifest = synthesize_dataset(
      (root / "clean3").string(),
      {spec_for_task("noise30"), spec_for_task("noise50"), spec_for_task("rain")},
      (root / "data3").string(), 150);

  // Sampling uniformity, 3-sigma binomial band over 6000 draws.
  TrainDataset data = TrainDataset::load(manifest, {}, 48);
  Rng rng(151);
  std::map<std::string, int> counts;
  const int draws = 6000;
  for (int i = 0; i < draws; ++i) ++counts[sample_task_batch(data, 48, 1, rng).task_id];
  const double p = 1.0 / 3.0, band = 3.0 * std::sqrt(p * (1 - p) * draws);
  bool uniform = counts.size() == 3;
  for (const auto& [id, c] : counts) uniform &= std::abs(c - p * draws) < band;

  // A short 3-task pretrain runs end to end.
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.decay_epoch = 1;
  cfg.steps_per_epoch = 3;
  cfg.batch_size = 2;
  cfg.crop = 48;
  cfg.seed = 152;
  ModelConfig mcfg = desk({"noise30", "noise50", "rain"});
  std::vector<StepRecord> steps;
  Checkpoint pre = pretrain(manifest, mcfg, cfg, &steps);
  bool ran = steps.size() == 6;

  // Dropping: census removed exactly, retained-task outputs bit-identical
  // before any fine-tuning step.
  IptModel kept = pre.model.retain_task("noise50");
  ModelConfig kept_cfg = mcfg;
  kept_cfg.tasks = {TaskSpec::from_id("noise50")};
  bool census = kept.parameter_count() == expected_parameter_count(kept_cfg) &&
                pre.model.parameter_count() - kept.parameter_count() ==
                    expected_parameter_count(mcfg) - expected_parameter_count(kept_cfg);
  Rng xr(153);
  Tensor x = randn({1, 3, 48, 48}, xr, 0.1, 0.5);
  Tensor before = pre.model.forward(x, "noise50");
  Tensor after = kept.forward(x, "noise50");
  bool identical = true;
  for (std::int64_t i = 0; i < before.size(); ++i) {
    identical &= before.data()[i] == after.data()[i];
  }

  char detail[160];
  std::snprintf(detail, sizeof detail,
                "freqs %d/%d/%d (band +-%.0f), drop census ok=%d, bit-identical=%d",
                counts["noise30"], counts["noise50"], counts["rain"], band, census ? 1 : 0,
                identical ? 1 : 0);
  report("multi-task-mechanics", uniform && ran && census && identical, detail);
}

void criterion_generalization(const OracleRun& run) {
  bool ok = true;
  double p10 = 0.0, p70 = 0.0;
  try {
    auto reports = generalization_eval(run.ckpt.model, {10.0, 70.0},
                                       (run.data_dir / "clean").string());
    p10 = reports[0].mean_psnr;
    p70 = reports[1].mean_psnr;
    ok = p10 > p70;
  } catch (const std::exception&) {
    ok = false;
  }
  char detail[96];
  std::snprintf(detail, sizeof detail, "PSNR(10)=%.2f dB > PSNR(70)=%.2f dB", p10, p70);
  report("generalization-protocol", ok, detail);
}

void criterion_viz(const fs::path& root) {
  ModelConfig cfg = desk({"noise30", "rain"});
  IptModel m = IptModel::init(cfg, 161);
  bool ok = true;
  const std::vector<double> sim = cosine_similarity_matrix(m.position_embeddings);
  const std::int64_t n = m.position_embeddings.dim(0);
  for (std::int64_t i = 0; i < n && ok; ++i) {
    ok &= std::abs(sim[static_cast<std::size_t>(i * n + i)] - 1.0) < 1e-12;
    for (std::int64_t j = 0; j < n; ++j) {
      ok &= std::abs(sim[static_cast<std::size_t>(i * n + j)] -
                     sim[static_cast<std::size_t>(j * n + i)]) < 1e-12;
    }
  }
  viz_embeddings(m, root / "viz1");
  viz_embeddings(m, root / "viz2");
  for (const char* name : {"position_embeddings.png", "task_noise30.png", "task_rain.png"}) {
    std::ifstream f1(root / "viz1" / name, std::ios::binary);
    std::ifstream f2(root / "viz2" / name, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    ok &= !b1.empty() && b1 == b2;
  }
  report("visualization", ok, "symmetric, unit diagonal, byte-stable renders");
}

void criterion_paper_scale() {
  std::vector<TaskSpec> tasks;
  for (const std::string id : {"sr2", "sr3", "sr4", "noise30", "noise50", "rain"}) {
    tasks.push_back(TaskSpec::from_id(id));
  }
  ModelConfig cfg = paper_config(std::move(tasks));
  IptModel m = IptModel::init(cfg, 171);  // construction only, never trained
  const std::int64_t count = m.parameter_count();
  const bool ok = std::abs(count - 114000000) < 0.02 * 114000000 &&
                  count == expected_parameter_count(cfg);
  char detail[96];
  std::snprintf(detail, sizeof detail, "%lld parameters (target 114M +-2%%)",
                static_cast<long long>(count));
  report("paper-scale-construction", ok, detail);
}

}  // namespace

int main() {
  const fs::path root = scratch();
  criterion_gradients();
  criterion_shapes();
  criterion_losses();
  criterion_degradations();
  OracleRun oracle = run_convergence_oracle(root);
  criterion_convergence(oracle);
  criterion_multitask(root);
  criterion_generalization(oracle);
  criterion_viz(root);
  criterion_paper_scale();
  std::printf("%s\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED");
  return g_failures == 0 ? 0 : 1;
}
