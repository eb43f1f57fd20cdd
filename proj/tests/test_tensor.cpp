#include <doctest.h>

#include "ipt/ops.hpp"
#include "ipt/tensor.hpp"

using namespace ipt;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("construction and element access") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK_THROWS_AS(Tensor({2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("copies share storage until mutation") {
  Tensor a({3}, {1, 2, 3});
  Tensor b = a;
  CHECK(a.data() == b.data());
  b.mut()[0] = 9.0;
  CHECK(a.at({0}) == 1.0);
  CHECK(b.at({0}) == 9.0);
}

TEST_CASE("scoped tapes nest and invalidate stale nodes") {
  Tensor x = Tensor::scalar(2.0);
  {
    Tape outer;
    outer.watch(x);
    CHECK(tracked(x));
    {
      Tape inner;
      CHECK_FALSE(tracked(x));  // bound to the outer tape, not this one
    }
    CHECK(tracked(x));
  }
  CHECK_FALSE(tracked(x));
}

TEST_CASE("backward accumulates through a diamond") {
  // y = x*x + x*x -> dy/dx = 4x
  Tensor x = Tensor::scalar(3.0);
  Tape tape;
  tape.watch(x);
  Tensor y = add(mul(x, x), mul(x, x));
  tape.backward(y);
  CHECK(tape.grad(x).item() == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar recorded on the tape") {
  Tensor x({2}, {1, 2});
  Tape tape;
  tape.watch(x);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Tensor stray = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(stray), ContractError);
}

TEST_CASE("mut() detaches from the tape") {
  Tensor x = Tensor::scalar(1.0);
  Tape tape;
  tape.watch(x);
  x.mut()[0] = 2.0;
  CHECK_FALSE(tracked(x));
}

TEST_SUITE_END();
