#include <doctest.h>

#include "helpers.hpp"
#include "ipt/model.hpp"
#include "ipt/ops.hpp"
#include "ipt/rng.hpp"

using namespace ipt;
using ipt::testing::check_grad;

namespace {

ModelConfig tiny_config(std::vector<std::string> ids) {
  std::vector<TaskSpec> tasks;
  for (auto& id : ids) tasks.push_back(TaskSpec::from_id(id));
  ModelConfig c = desk_config(std::move(tasks));
  c.channels = 4;
  c.patch = 2;
  c.num_encoder_layers = 1;
  c.num_decoder_layers = 1;
  c.num_heads = 2;
  c.crop = 8;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("TaskSpec::from_id mirrors the degradation registry") {
  TaskSpec sr = TaskSpec::from_id("sr4");
  CHECK(sr.kind == TaskKind::SuperResolution);
  CHECK(sr.scale == 4);
  TaskSpec n = TaskSpec::from_id("noise50");
  CHECK(n.scale == 1);
  CHECK(n.sigma == 50.0);
}

TEST_CASE("config validation") {
  ModelConfig c = tiny_config({"noise30"});
  c.validate();
  c.crop = 9;  // not divisible by patch
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config({"noise30"});
  c.num_heads = 7;  // does not divide d = 16
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config({});
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("initialization is seed-deterministic and task lookup works") {
  ModelConfig cfg = tiny_config({"noise30", "sr2"});
  IptModel a = IptModel::init(cfg, 9);
  IptModel b = IptModel::init(cfg, 9);
  CHECK(a.position_embeddings.at({0, 0}) == b.position_embeddings.at({0, 0}));
  IptModel c = IptModel::init(cfg, 10);
  CHECK(a.position_embeddings.at({0, 0}) != c.position_embeddings.at({0, 0}));
  CHECK(a.task_index("sr2") == 1);
  CHECK(a.has_task("noise30"));
  CHECK_FALSE(a.has_task("rain"));
  CHECK_THROWS_AS(a.task_index("rain"), LookupError);
}

TEST_CASE("encoder and decoder preserve token shape") {
  ModelConfig cfg = tiny_config({"noise30"});
  IptModel m = IptModel::init(cfg, 1);
  Rng rng(2);
  Tensor tokens = randn({2, 9, cfg.token_dim()}, rng, 0.1);
  Tensor enc = m.encoder_forward(tokens);
  CHECK(enc.shape() == tokens.shape());
  Tensor dec = m.decoder_forward(enc, "noise30");
  CHECK(dec.shape() == tokens.shape());
  // More tokens than the position table -> error
  Tensor big = randn({1, cfg.max_tokens() + 1, cfg.token_dim()}, rng);
  CHECK_THROWS_AS(m.encoder_forward(big), ConfigError);
}

TEST_CASE("forward obeys the tail scale law for every factor") {
  for (const std::string id : {"noise30", "sr2", "sr3", "sr4"}) {
    ModelConfig cfg = tiny_config({id});
    IptModel m = IptModel::init(cfg, 3);
    const std::int64_t k = m.task(id).scale;
    Rng rng(4);
    Tensor x = randn({1, 3, 8, 8}, rng, 0.1, 0.5);
    Tensor y = m.forward(x, id);
    CHECK(y.shape() == Shape{1, 3, 8 * k, 8 * k});
  }
}

TEST_CASE("forward rejects bad input shapes") {
  ModelConfig cfg = tiny_config({"noise30"});
  IptModel m = IptModel::init(cfg, 5);
  Rng rng(6);
  CHECK_THROWS_AS(m.forward(randn({3, 8, 8}, rng), "noise30"), DimensionError);
  CHECK_THROWS_AS(m.forward(randn({1, 3, 7, 8}, rng), "noise30"), DimensionError);
}

TEST_CASE("head kinds both work and differ in parameter count") {
  ModelConfig cfg = tiny_config({"noise30"});
  cfg.head_kind = "simple3";
  IptModel simple = IptModel::init(cfg, 7);
  Rng rng(8);
  Tensor x = randn({1, 3, 8, 8}, rng, 0.1, 0.5);
  CHECK(simple.forward(x, "noise30").shape() == Shape{1, 3, 8, 8});
  CHECK(simple.parameter_count() == expected_parameter_count(cfg));
}

TEST_CASE("parameter census matches the closed form") {
  for (auto ids : {std::vector<std::string>{"noise30"},
                   {"sr2", "sr3", "sr4", "noise30", "noise50", "rain"}}) {
    ModelConfig cfg = tiny_config(ids);
    IptModel m = IptModel::init(cfg, 1);
    CHECK(m.parameter_count() == expected_parameter_count(cfg));
  }
}

TEST_CASE("full-size configuration lands within 2% of 114M parameters") {
  std::vector<TaskSpec> tasks;
  for (const std::string id : {"sr2", "sr3", "sr4", "noise30", "noise50", "rain"}) {
    tasks.push_back(TaskSpec::from_id(id));
  }
  ModelConfig cfg = paper_config(std::move(tasks));
  // Construction only: the census comes from the closed form, no training.
  const std::int64_t count = expected_parameter_count(cfg);
  CHECK(count == 114574451);
  CHECK(std::abs(count - 114000000) < 0.02 * 114000000);
}

TEST_CASE("task embedding flattening matches the token component order") {
  ModelConfig cfg = tiny_config({"noise30"});
  IptModel m = IptModel::init(cfg, 11);
  Tensor flat = m.task_embedding_flat(0);
  CHECK(flat.shape() == Shape{cfg.token_dim()});
  // comp = c*P*P + py*P + px reads E_t[(py,px), c]
  const std::int64_t P = cfg.patch;
  for (std::int64_t c = 0; c < cfg.channels; ++c) {
    for (std::int64_t pos = 0; pos < P * P; ++pos) {
      CHECK(flat.at({c * P * P + pos}) == m.task_embeddings[0].at({pos, c}));
    }
  }
}

TEST_CASE("retain_task keeps outputs bit-identical and drops the right census") {
  ModelConfig cfg = tiny_config({"sr2", "noise30", "rain"});
  IptModel m = IptModel::init(cfg, 13);
  Rng rng(14);
  Tensor x = randn({1, 3, 8, 8}, rng, 0.1, 0.5);
  Tensor before = m.forward(x, "noise30");
  IptModel kept = m.retain_task("noise30");
  Tensor after = kept.forward(x, "noise30");
  for (std::int64_t i = 0; i < before.size(); ++i) {
    CHECK(before.data()[i] == after.data()[i]);
  }
  ModelConfig kept_cfg = cfg;
  kept_cfg.tasks = {TaskSpec::from_id("noise30")};
  CHECK(kept.parameter_count() == expected_parameter_count(kept_cfg));
  CHECK(kept.parameter_count() < m.parameter_count());
  CHECK_THROWS_AS(kept.forward(x, "sr2"), LookupError);
}

TEST_CASE("gradients flow through the whole tiny model") {
  // Full-model finite differences are expensive; spot-check one tensor from
  // each stage (head conv, attention, task/pos embeddings, tail conv).
  ModelConfig cfg = tiny_config({"sr2"});
  cfg.num_heads = 2;
  IptModel m = IptModel::init(cfg, 15);
  Rng rng(16);
  Tensor x = randn({1, 3, 4, 4}, rng, 0.1, 0.5);
  Tensor target = randn({1, 3, 8, 8}, rng, 0.1, 0.5);

  auto loss_fn = [&]() { return mean_all(abs_t(sub(m.forward(x, "sr2"), target))); };
  std::vector<Tensor*> probes{&m.heads[0].in.w, &m.encoder[0].attn.wq,
                              &m.decoder[0].cross_attn.wv, &m.task_embeddings[0],
                              &m.position_embeddings};
  probes.push_back(&m.tails[0].convs[0].b);
  for (Tensor* p : probes) {
    Tensor analytic;
    {
      Tape tape;
      m.for_each_param([&](const std::string&, Tensor& t) { tape.watch(t); });
      Tensor loss = loss_fn();
      tape.backward(loss);
      analytic = tape.grad(*p);
    }
    Rng pick(17);
    for (int trial = 0; trial < 3; ++trial) {
      const std::int64_t j = static_cast<std::int64_t>(pick.next_below(p->size()));
      const double eps = 1e-5;
      const double orig = p->data()[j];
      p->mut()[j] = orig + eps;
      const double hi = loss_fn().item();
      p->mut()[j] = orig - eps;
      const double lo = loss_fn().item();
      p->mut()[j] = orig;
      const double num = (hi - lo) / (2 * eps);
      const double ana = analytic.data()[j];
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-3});
      INFO("element ", j, " numeric ", num, " analytic ", ana);
      CHECK(std::abs(num - ana) / denom < 1e-3);
    }
  }
}

TEST_SUITE_END();
