#pragma once

#include <vector>

#include "ipt/ops.hpp"
#include "ipt/tensor.hpp"

namespace ipt {

/// Projection weights of one attention block; no bias terms.
struct MhaParams {
  Tensor wq, wk, wv, wo;  // each [d, d]
};

/// Multi-head scaled dot-product attention over [N,d] or [B,N,d] inputs.
/// Heads split d evenly; per-head scale 1/sqrt(d/num_heads); concatenated
/// heads go through the final wo projection.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MhaParams& w, int num_heads);

struct FfnParams {
  Tensor w1, b1;  // [d, hidden], [hidden]
  Tensor w2, b2;  // [hidden, d], [d]
};

/// Two fully connected layers with a ReLU between them.
Tensor ffn_forward(const Tensor& x, const FfnParams& w);

struct LayerNormParams {
  Tensor gamma, beta;  // [d]
};

inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps = 1e-5) {
  return layer_norm(x, p.gamma, p.beta, eps);
}

/// Optimizer state for one parameter list. Moment tensors are ordered like
/// the parameters they belong to.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const std::vector<Tensor*>& params, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8);

/// Bias-corrected Adam update applied in place.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr);

}  // namespace ipt
