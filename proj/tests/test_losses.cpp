#include <doctest.h>

#include "helpers.hpp"
#include "ipt/losses.hpp"
#include "ipt/ops.hpp"
#include "ipt/rng.hpp"

using namespace ipt;
using ipt::testing::check_grad;

TEST_SUITE_BEGIN("losses");

TEST_CASE("supervised L1 basics") {
  Tensor a({1, 3, 2, 2}, std::vector<double>(12, 0.5));
  Tensor b = a;
  CHECK(supervised_l1(a, b).item() == 0.0);
  Tensor c({1, 3, 2, 2}, std::vector<double>(12, 0.75));
  CHECK(supervised_l1(a, c).item() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(supervised_l1(a, c).item() >= 0.0);
  CHECK_THROWS_AS(supervised_l1(a, Tensor({1, 3, 2, 3})), DimensionError);
}

TEST_CASE("contrastive loss hand-derived cases") {
  // Identical features across batch and patches, B=2: every term is
  // -log(e^1 / e^1) = 0.
  Tensor same({2, 2, 3}, std::vector<double>(12, 0.7));
  CHECK(contrastive_loss(same).item() == doctest::Approx(0.0).epsilon(1e-9));

  // Orthogonal feature per image, B=2, N=1: -log(e^1 / e^0) = -1.
  Tensor ortho({2, 1, 2}, {1, 0, 0, 1});
  CHECK(contrastive_loss(ortho).item() == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("contrastive loss preconditions") {
  CHECK_THROWS_AS(contrastive_loss(Tensor({1, 2, 3})), ContractError);
  CHECK_THROWS_AS(contrastive_loss(Tensor({4, 3})), DimensionError);
}

TEST_CASE("contrastive loss is batch-permutation and scale invariant") {
  Rng rng(61);
  Tensor f = randn({3, 4, 6}, rng);
  const double base = contrastive_loss(f).item();

  // Swap images 0 and 2.
  Tensor perm = f;
  double* p = perm.mut();
  const std::int64_t stride = 4 * 6;
  for (std::int64_t i = 0; i < stride; ++i) std::swap(p[i], p[2 * stride + i]);
  CHECK(contrastive_loss(perm).item() == doctest::Approx(base).epsilon(1e-12));

  CHECK(contrastive_loss(scale(f, 3.7)).item() == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("total loss identity and lambda linearity") {
  Rng rng(62);
  Tensor f = randn({2, 3, 5}, rng);
  Tensor sup = Tensor::scalar(0.625);
  Tensor con = contrastive_loss(f);
  LossBreakdown lb = total_loss(sup, con, 0.1);
  CHECK(lb.total.item() == doctest::Approx(0.1 * con.item() + 0.625).epsilon(1e-12));
  CHECK(total_loss(sup, con, 0.0).total.item() == sup.item());  // exact

  const double l1 = total_loss(sup, con, 0.05).total.item();
  const double l2 = total_loss(sup, con, 0.35).total.item();
  CHECK(l2 - l1 == doctest::Approx(0.3 * con.item()).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(sup, con, -0.1), ContractError);
}

TEST_CASE("gradient of the combined loss is the lambda-weighted sum") {
  Rng rng(63);
  Tensor f = randn({2, 2, 4}, rng);
  const double lambda = 0.1;
  Tensor target = randn({2, 2, 4}, rng);

  auto grad_of = [&](auto loss_maker) {
    Tape tape;
    Tensor in = f;
    tape.watch(in);
    Tensor loss = loss_maker(in);
    tape.backward(loss);
    return tape.grad(in);
  };
  Tensor g_sup = grad_of([&](Tensor& in) { return supervised_l1(in, target); });
  Tensor g_con = grad_of([&](Tensor& in) { return contrastive_loss(in); });
  Tensor g_tot = grad_of([&](Tensor& in) {
    return total_loss(supervised_l1(in, target), contrastive_loss(in), lambda).total;
  });
  for (std::int64_t i = 0; i < f.size(); ++i) {
    CHECK(std::abs(g_tot.data()[i] - (g_sup.data()[i] + lambda * g_con.data()[i])) < 1e-10);
  }
}

TEST_CASE("gradients: both losses pass finite differences") {
  Rng rng(64);
  Tensor pred = randn({1, 3, 2, 2}, rng, 0.3, 0.5);
  Tensor target = randn({1, 3, 2, 2}, rng, 0.3, 0.5);
  check_grad([&](std::vector<Tensor>& in) { return supervised_l1(in[0], target); }, {pred},
             1e-5, 1e-3);
  Tensor f = randn({2, 2, 4}, rng);
  check_grad([](std::vector<Tensor>& in) { return contrastive_loss(in[0]); }, {f});
}

TEST_SUITE_END();
