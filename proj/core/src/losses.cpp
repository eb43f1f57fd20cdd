#include "ipt/losses.hpp"

#include "ipt/ops.hpp"

namespace ipt {

Tensor supervised_l1(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("supervised_l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  return mean_all(abs_t(sub(pred, target)));
}

Tensor contrastive_loss(const Tensor& features) {
  if (features.rank() != 3) {
    throw DimensionError("contrastive_loss expects [B,N,d], got " + shape_str(features.shape()));
  }
  const std::int64_t b = features.dim(0), n = features.dim(1), d = features.dim(2);
  if (b < 2) throw ContractError("contrastive_loss needs batch size >= 2");

  Tensor flat = reshape(features, {b * n, d});
  Tensor norm = sqrt_t(sum_axes(mul(flat, flat), {1}, /*keepdims=*/true));
  Tensor unit = div(flat, norm);
  // sim[j*n + i1, k*n + i2] = cos(f^j_{i1}, f^k_{i2})
  Tensor sim = reshape(matmul(unit, transpose(unit, {1, 0})), {b, n, b, n});

  // Same-image selector along the k axis.
  Tensor mask({b, 1, b, 1});
  {
    double* m = mask.mut();
    for (std::int64_t j = 0; j < b; ++j) m[j * b + j] = 1.0;
  }
  Tensor numer = sum_axes(mul(sim, mask), {2});                       // [B,N,N]
  Tensor denom = sum_axes(mul(exp_t(sim), sub(Tensor::scalar(1.0), mask)), {2});
  return mean_all(sub(log_t(denom), numer));
}

LossBreakdown total_loss(const Tensor& supervised, const Tensor& contrastive, double lambda) {
  if (lambda < 0.0) throw ContractError("total_loss: lambda must be >= 0");
  LossBreakdown out;
  out.supervised = supervised;
  out.contrastive = contrastive;
  out.lambda = lambda;
  out.total = add(scale(contrastive, lambda), supervised);
  return out;
}

}  // namespace ipt
