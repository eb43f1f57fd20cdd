#include "ipt/nn.hpp"

#include <cmath>

namespace ipt {

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MhaParams& w, int num_heads) {
  const bool batched = q.rank() == 3;
  if (!batched && q.rank() != 2) {
    throw DimensionError("attention expects [N,d] or [B,N,d], got " + shape_str(q.shape()));
  }
  const std::int64_t d = q.dim(q.rank() - 1);
  if (num_heads < 1 || d % num_heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  const std::int64_t dh = d / num_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q3 = batched ? q : reshape(q, {1, q.dim(0), d});
  Tensor k3 = batched ? k : reshape(k, {1, k.dim(0), d});
  Tensor v3 = batched ? v : reshape(v, {1, v.dim(0), d});
  const std::int64_t b = q3.dim(0);
  const std::int64_t nq = q3.dim(1);
  const std::int64_t nk = k3.dim(1);

  Tensor qh = transpose(reshape(matmul(q3, w.wq), {b, nq, num_heads, dh}), {0, 2, 1, 3});
  Tensor kh = transpose(reshape(matmul(k3, w.wk), {b, nk, num_heads, dh}), {0, 2, 1, 3});
  Tensor vh = transpose(reshape(matmul(v3, w.wv), {b, nk, num_heads, dh}), {0, 2, 1, 3});

  Tensor scores = scale(matmul(qh, transpose(kh, {0, 1, 3, 2})), inv_scale);
  Tensor attn = softmax(scores);
  Tensor ctx = matmul(attn, vh);  // [b, h, nq, dh]
  Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {b, nq, d});
  Tensor out = matmul(merged, w.wo);
  return batched ? out : reshape(out, {nq, d});
}

Tensor ffn_forward(const Tensor& x, const FfnParams& w) {
  Tensor h = relu(add(matmul(x, w.w1), w.b1));
  return add(matmul(h, w.w2), w.b2);
}

AdamState make_adam_state(const std::vector<Tensor*>& params, double beta1, double beta2,
                          double eps) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.first_moment.reserve(params.size());
  s.second_moment.reserve(params.size());
  for (const Tensor* p : params) {
    s.first_moment.emplace_back(p->shape());
    s.second_moment.emplace_back(p->shape());
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: parameter/gradient/state counts disagree");
  }
  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) {
      throw ContractError("adam_step: gradient shape " + shape_str(g.shape()) +
                          " vs parameter shape " + shape_str(p.shape()));
    }
    double* m = state.first_moment[i].mut();
    double* v = state.second_moment[i].mut();
    double* pd = p.mut();
    const double* gd = g.data();
    const std::int64_t n = p.size();
    for (std::int64_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * gd[j];
      v[j] = b2 * v[j] + (1.0 - b2) * gd[j] * gd[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      pd[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace ipt
