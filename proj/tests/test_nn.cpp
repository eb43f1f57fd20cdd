#include <doctest.h>

#include "helpers.hpp"
#include "ipt/nn.hpp"
#include "ipt/rng.hpp"

using namespace ipt;
using ipt::testing::check_grad;

TEST_SUITE_BEGIN("nn");

namespace {
MhaParams random_mha(std::int64_t d, Rng& rng) {
  return MhaParams{randn({d, d}, rng, 0.3), randn({d, d}, rng, 0.3), randn({d, d}, rng, 0.3),
                   randn({d, d}, rng, 0.3)};
}
}  // namespace

TEST_CASE("attention preserves shape for [N,d] and [B,N,d]") {
  Rng rng(31);
  MhaParams w = random_mha(8, rng);
  Tensor x = randn({5, 8}, rng);
  CHECK(multi_head_attention(x, x, x, w, 2).shape() == Shape{5, 8});
  Tensor xb = randn({3, 5, 8}, rng);
  CHECK(multi_head_attention(xb, xb, xb, w, 4).shape() == Shape{3, 5, 8});
}

TEST_CASE("single-head attention with identity projections reduces to softmax mixing") {
  // With wq=wk=0 the attention weights are uniform; wv=wo=I passes the mean through.
  const std::int64_t d = 4, n = 3;
  MhaParams w{Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d, d}),
              Tensor::zeros({d, d})};
  for (std::int64_t i = 0; i < d; ++i) {
    w.wv.mut()[i * d + i] = 1.0;
    w.wo.mut()[i * d + i] = 1.0;
  }
  Tensor x({n, d}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  Tensor y = multi_head_attention(x, x, x, w, 1);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      const double want = (j < 3) ? 1.0 / 3.0 : 0.0;
      CHECK(y.at({i, j}) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradients: attention and ffn") {
  Rng rng(32);
  MhaParams w = random_mha(4, rng);
  Tensor x = randn({3, 4}, rng);
  check_grad(
      [&](std::vector<Tensor>& in) {
        MhaParams p{in[1], in[2], in[3], in[4]};
        return sum_all(mul(multi_head_attention(in[0], in[0], in[0], p, 2), in[0]));
      },
      {x, w.wq, w.wk, w.wv, w.wo});

  FfnParams f{randn({4, 6}, rng, 0.4), randn({6}, rng, 0.4), randn({6, 4}, rng, 0.4),
              randn({4}, rng, 0.4)};
  check_grad(
      [&](std::vector<Tensor>& in) {
        FfnParams p{in[1], in[2], in[3], in[4]};
        return sum_all(mul(ffn_forward(in[0], p), in[0]));
      },
      {x, f.w1, f.b1, f.w2, f.b2}, 1e-5, 1e-3);  // relu kinks
}

TEST_CASE("adam first step moves by about -lr * sign(gradient)") {
  Tensor p({3}, {1.0, 2.0, 3.0});
  Tensor g({3}, {0.5, -2.0, 1e-12});
  std::vector<Tensor*> params{&p};
  AdamState st = make_adam_state(params);
  adam_step(params, {g}, st, 0.01);
  // With bias correction the first update is lr * g / (|g| + eps'), i.e. ~sign.
  CHECK(p.at({0}) == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(p.at({1}) == doctest::Approx(2.0 + 0.01).epsilon(1e-4));
  CHECK(std::abs(p.at({2}) - 3.0) < 0.01);  // tiny gradient -> eps-damped step
  CHECK(st.step_count == 1);
}

TEST_CASE("adam converges on a quadratic") {
  Tensor p({2}, {5.0, -4.0});
  std::vector<Tensor*> params{&p};
  AdamState st = make_adam_state(params);
  for (int i = 0; i < 2000; ++i) {
    Tensor g({2}, {2.0 * p.at({0}), 2.0 * p.at({1})});
    adam_step(params, {g}, st, 0.05);
  }
  CHECK(std::abs(p.at({0})) < 1e-3);
  CHECK(std::abs(p.at({1})) < 1e-3);
}

TEST_SUITE_END();
