#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <doctest.h>

#include "ipt/rng.hpp"
#include "ipt/tensor.hpp"

namespace ipt::testing {

/// Central finite differences against the tape gradient for every element of
/// every input. `fn` must reduce to a scalar.
inline void check_grad(const std::function<Tensor(std::vector<Tensor>&)>& fn,
                       std::vector<Tensor> inputs, double eps = 1e-5, double tol = 1e-4) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    for (Tensor& in : inputs) tape.watch(in);
    Tensor loss = fn(inputs);
    tape.backward(loss);
    for (Tensor& in : inputs) analytic.push_back(tape.grad(in));
  }
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
      INFO("input ", i, " element ", j, ": numeric ", num, " analytic ", ana);
      CHECK(std::abs(num - ana) / denom < tol);
    }
  }
}

/// Unique per-test scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("ipt_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace ipt::testing
