#pragma once

#include "ipt/tensor.hpp"

namespace ipt {

// Elementwise with NumPy-style broadcasting (trailing-dim alignment).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor abs_t(const Tensor& a);  // subgradient 0 at 0
Tensor relu(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// Sum over the given axes (ascending, unique). keepdims keeps them as 1.
Tensor sum_axes(const Tensor& a, const std::vector<int>& axes, bool keepdims = false);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, const std::vector<int>& perm);

/// Depth-to-space: [B, C*r*r, H, W] -> [B, C, r*H, r*W]. Input channel
/// c*r*r + dr*r + dc lands at spatial offset (dr, dc) inside each r x r block.
Tensor pixel_shuffle(const Tensor& x, std::int64_t r);
/// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, std::int64_t r);

/// [B, C, H, W] -> [B, N, P*P*C] tokens; N = (H/P)*(W/P), patches in raster
/// order, token components ordered channel-major then within-patch row, col.
Tensor patchify(const Tensor& f, std::int64_t patch);
Tensor depatchify(const Tensor& tokens, std::int64_t patch, std::int64_t height,
                  std::int64_t width);

/// First `count` rows along axis 0.
Tensor slice_rows(const Tensor& a, std::int64_t count);

/// Batched matrix product, [..., m, k] x [..., k, n] with broadcastable
/// batch prefixes.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Layer normalization over the last axis with affine gamma/beta of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Cross-correlation convolution, x [B,Cin,H,W], w [Cout,Cin,kh,kw],
/// optional bias [Cout]. Output extent (H + 2*pad - kh)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t stride = 1, std::int64_t pad = 0);
Tensor conv2d(const Tensor& x, const Tensor& w, std::int64_t stride = 1,
              std::int64_t pad = 0);

}  // namespace ipt
