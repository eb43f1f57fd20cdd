#pragma once

#include "ipt/tensor.hpp"

namespace ipt {

struct LossBreakdown {
  Tensor supervised;
  Tensor contrastive;
  double lambda = 0.0;
  Tensor total;  // lambda * contrastive + supervised
};

/// Mean absolute error between prediction and target.
Tensor supervised_l1(const Tensor& pred, const Tensor& target);

/// Patchwise contrastive objective over decoder features [B,N,d]: for each
/// image j and patch pair (i1,i2), -log of exp(cos same-image) over the sum
/// of exp(cos against every other image k != j); mean over B*N*N terms.
/// Can be negative; requires B >= 2.
Tensor contrastive_loss(const Tensor& features);

LossBreakdown total_loss(const Tensor& supervised, const Tensor& contrastive, double lambda);

}  // namespace ipt
