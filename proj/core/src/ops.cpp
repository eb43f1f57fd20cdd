#include "ipt/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace ipt {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using BackFn =
    std::function<void(Tape&, const std::vector<double>&, const std::vector<int>&)>;

// Records a node on the active tape when any input is tracked. The back
// callback receives the output gradient and the parent node ids (-1 for
// untracked inputs).
Tensor finish(Tensor y, std::initializer_list<const Tensor*> inputs, BackFn back) {
  Tape* tape = Tape::active();
  if (!tape) return y;
  std::vector<int> parents;
  parents.reserve(inputs.size());
  bool any = false;
  for (const Tensor* t : inputs) {
    int n = t->node_on(*tape);
    parents.push_back(n);
    any = any || n >= 0;
  }
  if (!any) return y;
  int id = tape->push(y.size(), [back = std::move(back), parents = std::move(parents)](
                                    Tape& t, int self) {
    back(t, t.grad_of(self), parents);
  });
  y.bind(*tape, id);
  return y;
}

// Row-major strides of `s` aligned to the broadcast result `out`; 0 on
// broadcast axes. Throws when the shapes are incompatible.
std::vector<std::int64_t> aligned_strides(const Shape& s, const Shape& out) {
  const int r = static_cast<int>(out.size());
  const int rs = static_cast<int>(s.size());
  std::vector<std::int64_t> native(static_cast<std::size_t>(rs), 1);
  for (int i = rs - 2; i >= 0; --i) {
    native[static_cast<std::size_t>(i)] =
        native[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
  }
  std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < rs; ++i) {
    std::int64_t ext = s[static_cast<std::size_t>(rs - 1 - i)];
    std::int64_t oext = out[static_cast<std::size_t>(r - 1 - i)];
    if (ext != oext && ext != 1) {
      throw DimensionError("broadcast mismatch: " + shape_str(s) + " vs " +
                           shape_str(out));
    }
    strides[static_cast<std::size_t>(r - 1 - i)] =
        (ext == 1) ? 0 : native[static_cast<std::size_t>(rs - 1 - i)];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int r = std::max(a.size(), b.size());
  Shape out(static_cast<std::size_t>(r), 1);
  for (int i = 0; i < r; ++i) {
    std::int64_t da = (i < static_cast<int>(a.size()))
                          ? a[a.size() - 1 - static_cast<std::size_t>(i)]
                          : 1;
    std::int64_t db = (i < static_cast<int>(b.size()))
                          ? b[b.size() - 1 - static_cast<std::size_t>(i)]
                          : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[out.size() - 1 - static_cast<std::size_t>(i)] = std::max(da, db);
  }
  return out;
}

// Odometer walk over `out`, yielding (flat_out, off_a, off_b).
template <class F>
void bcast_loop(const Shape& out, const std::vector<std::int64_t>& sa,
                const std::vector<std::int64_t>& sb, F&& f) {
  const std::int64_t n = numel(out);
  if (n == 0) return;
  const int r = static_cast<int>(out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t offa = 0, offb = 0;
  for (std::int64_t i = 0;;) {
    f(i, offa, offb);
    if (++i == n) break;
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      ++idx[du];
      offa += sa[du];
      offb += sb[du];
      if (idx[du] < out[du]) break;
      idx[du] = 0;
      offa -= sa[du] * out[du];
      offb -= sb[du] * out[du];
    }
  }
}

// Sum-reduces a gradient over broadcast axes back to the input shape.
std::vector<double> reduce_to(const std::vector<double>& g, const Shape& from,
                              const Shape& to) {
  std::vector<double> out(static_cast<std::size_t>(numel(to)), 0.0);
  auto st = aligned_strides(to, from);
  bcast_loop(from, st, st, [&](std::int64_t i, std::int64_t off, std::int64_t) {
    out[static_cast<std::size_t>(off)] += g[static_cast<std::size_t>(i)];
  });
  return out;
}

using Fwd = double (*)(double, double);
using Partial = double (*)(double, double);  // d out / d operand, given (a, b)

Tensor binary_op(const Tensor& a, const Tensor& b, Fwd f, Partial dfa, Partial dfb) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* pa = a.data();
  const double* pb = b.data();
  if (a.shape() == b.shape()) {
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(pa[i], pb[i]);
  } else {
    auto sa = aligned_strides(a.shape(), out_shape);
    auto sb = aligned_strides(b.shape(), out_shape);
    bcast_loop(out_shape, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
      out[static_cast<std::size_t>(i)] = f(pa[oa], pb[ob]);
    });
  }
  Tensor y(out_shape, std::move(out));
  auto abuf = a.buf();
  auto bbuf = b.buf();
  Shape ashape = a.shape(), bshape = b.shape(), yshape = y.shape();
  return finish(std::move(y), {&a, &b},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  const double* va = abuf->data();
                  const double* vb = bbuf->data();
                  auto sa = aligned_strides(ashape, yshape);
                  auto sb = aligned_strides(bshape, yshape);
                  if (p[0] >= 0) {
                    std::vector<double> gfull(gy.size());
                    bcast_loop(yshape, sa, sb,
                               [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                                 gfull[static_cast<std::size_t>(i)] =
                                     gy[static_cast<std::size_t>(i)] * dfa(va[oa], vb[ob]);
                               });
                    if (ashape == yshape) {
                      tape.accumulate(p[0], gfull);
                    } else {
                      tape.accumulate(p[0], reduce_to(gfull, yshape, ashape));
                    }
                  }
                  if (p[1] >= 0) {
                    std::vector<double> gfull(gy.size());
                    bcast_loop(yshape, sa, sb,
                               [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                                 gfull[static_cast<std::size_t>(i)] =
                                     gy[static_cast<std::size_t>(i)] * dfb(va[oa], vb[ob]);
                               });
                    if (bshape == yshape) {
                      tape.accumulate(p[1], gfull);
                    } else {
                      tape.accumulate(p[1], reduce_to(gfull, yshape, bshape));
                    }
                  }
                });
}

using UnaryFwd = double (*)(double);
using UnaryPartial = double (*)(double, double);  // (x, y) -> dy/dx

Tensor unary_op(const Tensor& a, UnaryFwd f, UnaryPartial df) {
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = f(pa[i]);
  Tensor y(a.shape(), std::move(out));
  auto abuf = a.buf();
  auto ybuf = y.buf();
  return finish(std::move(y), {&a},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  const double* va = abuf->data();
                  const double* vy = ybuf->data();
                  std::vector<double> g(gy.size());
                  for (std::size_t i = 0; i < gy.size(); ++i) {
                    g[i] = gy[i] * df(va[i], vy[i]);
                  }
                  tape.accumulate(p[0], g);
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = pa[i] * c;
  Tensor y(a.shape(), std::move(out));
  return finish(std::move(y), {&a},
                [c](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  for (std::size_t i = 0; i < gy.size(); ++i) g[i] = gy[i] * c;
                  tape.accumulate(p[0], g);
                });
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = pa[i] + c;
  Tensor y(a.shape(), std::move(out));
  return finish(std::move(y), {&a},
                [](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] >= 0) tape.accumulate(p[0], gy);
                });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor abs_t(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) s += pa[i];
  Tensor y = Tensor::scalar(s);
  std::int64_t n = a.size();
  return finish(std::move(y), {&a},
                [n](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  tape.accumulate(p[0], std::vector<double>(static_cast<std::size_t>(n), gy[0]));
                });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axes(const Tensor& a, const std::vector<int>& axes, bool keepdims) {
  const int r = a.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r) throw DimensionError("sum_axes: axis out of range");
    reduced[static_cast<std::size_t>(ax)] = true;
  }
  Shape kept_shape(a.shape());
  for (int i = 0; i < r; ++i) {
    if (reduced[static_cast<std::size_t>(i)]) kept_shape[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<double> out(static_cast<std::size_t>(numel(kept_shape)), 0.0);
  const double* pa = a.data();
  auto st = aligned_strides(kept_shape, a.shape());
  bcast_loop(a.shape(), st, st, [&](std::int64_t i, std::int64_t off, std::int64_t) {
    out[static_cast<std::size_t>(off)] += pa[i];
  });
  Shape final_shape;
  if (keepdims) {
    final_shape = kept_shape;
  } else {
    for (int i = 0; i < r; ++i) {
      if (!reduced[static_cast<std::size_t>(i)]) {
        final_shape.push_back(a.shape()[static_cast<std::size_t>(i)]);
      }
    }
    if (final_shape.empty()) final_shape.push_back(1);
  }
  Tensor y(final_shape, std::move(out));
  Shape ashape = a.shape();
  return finish(std::move(y), {&a},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(static_cast<std::size_t>(numel(ashape)));
                  auto strides = aligned_strides(kept_shape, ashape);
                  bcast_loop(ashape, strides, strides,
                             [&](std::int64_t i, std::int64_t off, std::int64_t) {
                               g[static_cast<std::size_t>(i)] = gy[static_cast<std::size_t>(off)];
                             });
                  tape.accumulate(p[0], g);
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  std::int64_t n = 1;
  int infer = -1;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (shape[static_cast<std::size_t>(i)] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = i;
    } else {
      n *= shape[static_cast<std::size_t>(i)];
    }
  }
  if (infer >= 0) shape[static_cast<std::size_t>(infer)] = a.size() / n;
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor y = Tensor::share(std::move(shape), a.buf());
  return finish(std::move(y), {&a},
                [](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] >= 0) tape.accumulate(p[0], gy);
                });
}

namespace {

// dst holds src permuted so that dst axis i is src axis perm[i].
void permute_copy(const double* src, const Shape& sshape, const std::vector<int>& perm,
                  double* dst) {
  const int r = static_cast<int>(sshape.size());
  Shape dshape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    dshape[static_cast<std::size_t>(i)] = sshape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  std::vector<std::int64_t> sstrides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    sstrides[static_cast<std::size_t>(i)] =
        sstrides[static_cast<std::size_t>(i + 1)] * sshape[static_cast<std::size_t>(i + 1)];
  }
  std::vector<std::int64_t> mapped(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    mapped[static_cast<std::size_t>(i)] = sstrides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  bcast_loop(dshape, mapped, mapped, [&](std::int64_t i, std::int64_t off, std::int64_t) {
    dst[i] = src[off];
  });
}

}  // namespace

Tensor transpose(const Tensor& a, const std::vector<int>& perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r) throw DimensionError("transpose: bad permutation size");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("transpose: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = a.dim(p);
  }
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  permute_copy(a.data(), a.shape(), perm, out.data());
  Tensor y(std::move(out_shape), std::move(out));
  Shape yshape = y.shape();
  std::vector<int> inv(perm.size());
  for (int i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  return finish(std::move(y), {&a},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  permute_copy(gy.data(), yshape, inv, g.data());
                  tape.accumulate(p[0], g);
                });
}

namespace {

// Forward mapping for pixel_shuffle; shared with the inverse.
void shuffle_copy(const double* src, std::int64_t b, std::int64_t c, std::int64_t r,
                  std::int64_t h, std::int64_t w, double* dst, bool inverse) {
  // src layout [B, C*r*r, H, W], dst layout [B, C, r*H, r*W] when !inverse.
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t dr = 0; dr < r; ++dr) {
        for (std::int64_t dc = 0; dc < r; ++dc) {
          std::int64_t cin = ci * r * r + dr * r + dc;
          for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
              std::int64_t si = ((bi * c * r * r + cin) * h + y) * w + x;
              std::int64_t di = ((bi * c + ci) * (r * h) + (r * y + dr)) * (r * w) + (r * x + dc);
              if (inverse) {
                dst[si] = src[di];
              } else {
                dst[di] = src[si];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::int64_t r) {
  if (x.rank() != 4) throw DimensionError("pixel_shuffle expects rank 4, got " + shape_str(x.shape()));
  std::int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (r < 1 || cin % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(cin) +
                         " not divisible by r^2 = " + std::to_string(r * r));
  }
  std::int64_t c = cin / (r * r);
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  shuffle_copy(x.data(), b, c, r, h, w, out.data(), false);
  Tensor y({b, c, r * h, r * w}, std::move(out));
  return finish(std::move(y), {&x},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  shuffle_copy(gy.data(), b, c, r, h, w, g.data(), true);
                  tape.accumulate(p[0], g);
                });
}

Tensor pixel_unshuffle(const Tensor& x, std::int64_t r) {
  if (x.rank() != 4) throw DimensionError("pixel_unshuffle expects rank 4");
  std::int64_t b = x.dim(0), c = x.dim(1), rh = x.dim(2), rw = x.dim(3);
  if (r < 1 || rh % r != 0 || rw % r != 0) {
    throw DimensionError("pixel_unshuffle: extents not divisible by r");
  }
  std::int64_t h = rh / r, w = rw / r;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  shuffle_copy(x.data(), b, c, r, h, w, out.data(), true);
  Tensor y({b, c * r * r, h, w}, std::move(out));
  return finish(std::move(y), {&x},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  shuffle_copy(gy.data(), b, c, r, h, w, g.data(), false);
                  tape.accumulate(p[0], g);
                });
}

namespace {

void patch_copy(const double* src, std::int64_t b, std::int64_t c, std::int64_t h,
                std::int64_t w, std::int64_t patch, double* dst, bool inverse) {
  // src layout [B,C,H,W]; dst layout [B, N, P*P*C] with token component index
  // ci*P*P + py*P + px (channel-major).
  std::int64_t gh = h / patch, gw = w / patch;
  std::int64_t d = patch * patch * c;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t y = 0; y < h; ++y) {
        std::int64_t pr = y / patch, py = y % patch;
        for (std::int64_t x = 0; x < w; ++x) {
          std::int64_t pc = x / patch, px = x % patch;
          std::int64_t token = pr * gw + pc;
          std::int64_t comp = ci * patch * patch + py * patch + px;
          std::int64_t si = ((bi * c + ci) * h + y) * w + x;
          std::int64_t di = (bi * gh * gw + token) * d + comp;
          if (inverse) {
            dst[si] = src[di];
          } else {
            dst[di] = src[si];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor patchify(const Tensor& f, std::int64_t patch) {
  if (f.rank() != 4) throw DimensionError("patchify expects rank 4, got " + shape_str(f.shape()));
  std::int64_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: extents " + shape_str(f.shape()) +
                         " not divisible by patch " + std::to_string(patch));
  }
  std::int64_t n = (h / patch) * (w / patch);
  std::vector<double> out(static_cast<std::size_t>(f.size()));
  patch_copy(f.data(), b, c, h, w, patch, out.data(), false);
  Tensor y({b, n, patch * patch * c}, std::move(out));
  return finish(std::move(y), {&f},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  patch_copy(gy.data(), b, c, h, w, patch, g.data(), true);
                  tape.accumulate(p[0], g);
                });
}

Tensor depatchify(const Tensor& tokens, std::int64_t patch, std::int64_t height,
                  std::int64_t width) {
  if (tokens.rank() != 3) throw DimensionError("depatchify expects rank 3 tokens");
  std::int64_t b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
  if (patch < 1 || d % (patch * patch) != 0) {
    throw DimensionError("depatchify: token dim not divisible by patch^2");
  }
  std::int64_t c = d / (patch * patch);
  if (height % patch != 0 || width % patch != 0 || (height / patch) * (width / patch) != n) {
    throw DimensionError("depatchify: token count " + std::to_string(n) +
                         " inconsistent with extents " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  std::vector<double> out(static_cast<std::size_t>(tokens.size()));
  patch_copy(tokens.data(), b, c, height, width, patch, out.data(), true);
  Tensor y({b, c, height, width}, std::move(out));
  return finish(std::move(y), {&tokens},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(gy.size());
                  patch_copy(gy.data(), b, c, height, width, patch, g.data(), false);
                  tape.accumulate(p[0], g);
                });
}

Tensor slice_rows(const Tensor& a, std::int64_t count) {
  if (a.rank() < 1 || count < 0 || count > a.dim(0)) {
    throw DimensionError("slice_rows: cannot take " + std::to_string(count) +
                         " rows from " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = count;
  const std::int64_t row = a.size() / std::max<std::int64_t>(a.dim(0), 1);
  std::vector<double> out(static_cast<std::size_t>(count * row));
  std::memcpy(out.data(), a.data(), out.size() * sizeof(double));
  Tensor y(std::move(out_shape), std::move(out));
  const std::int64_t total = a.size();
  return finish(std::move(y), {&a},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  std::vector<double> g(static_cast<std::size_t>(total), 0.0);
                  std::memcpy(g.data(), gy.data(), gy.size() * sizeof(double));
                  tape.accumulate(p[0], g);
                });
}

namespace {

struct BatchPlan {
  Shape batch;                      // broadcast batch shape
  std::vector<std::int64_t> sa, sb; // per-batch-dim strides in matrices
  std::int64_t count = 1;
};

BatchPlan batch_plan(const Shape& a, const Shape& b) {
  Shape ba(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
  BatchPlan plan;
  plan.batch = broadcast_shape(ba, bb);
  plan.count = numel(plan.batch);
  plan.sa = aligned_strides(ba, plan.batch);
  plan.sb = aligned_strides(bb, plan.batch);
  return plan;
}

template <class F>
void batch_loop(const BatchPlan& plan, F&& f) {
  bcast_loop(plan.batch, plan.sa, plan.sb, std::forward<F>(f));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul requires rank >= 2, got " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::int64_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != k2) {
    throw DimensionError("matmul inner extents disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  BatchPlan plan = batch_plan(a.shape(), b.shape());
  Shape out_shape = plan.batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* pa = a.data();
  const double* pb = b.data();
  batch_loop(plan, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
    CMapMat A(pa + oa * m * k, m, k);
    CMapMat B(pb + ob * k * n, k, n);
    MapMat C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  });
  Tensor y(std::move(out_shape), std::move(out));
  auto abuf = a.buf();
  auto bbuf = b.buf();
  Shape ashape = a.shape(), bshape = b.shape();
  return finish(std::move(y), {&a, &b},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  BatchPlan bp = batch_plan(ashape, bshape);
                  const double* va = abuf->data();
                  const double* vb = bbuf->data();
                  if (p[0] >= 0) {
                    std::vector<double> ga(abuf->size(), 0.0);
                    batch_loop(bp, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                      CMapMat G(gy.data() + i * m * n, m, n);
                      CMapMat B(vb + ob * k * n, k, n);
                      MapMat GA(ga.data() + oa * m * k, m, k);
                      GA.noalias() += G * B.transpose();
                    });
                    tape.accumulate(p[0], ga);
                  }
                  if (p[1] >= 0) {
                    std::vector<double> gb(bbuf->size(), 0.0);
                    batch_loop(bp, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                      CMapMat G(gy.data() + i * m * n, m, n);
                      CMapMat A(va + oa * m * k, m, k);
                      MapMat GB(gb.data() + ob * k * n, k, n);
                      GB.noalias() += A.transpose() * G;
                    });
                    tape.accumulate(p[1], gb);
                  }
                });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax on rank-0 tensor");
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const double* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double* orow = out.data() + r * d;
    double mx = row[0];
    for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - mx);
      sum += orow[i];
    }
    for (std::int64_t i = 0; i < d; ++i) orow[i] /= sum;
  }
  Tensor y(x.shape(), std::move(out));
  auto ybuf = y.buf();
  return finish(std::move(y), {&x},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  if (p[0] < 0) return;
                  const double* vy = ybuf->data();
                  std::vector<double> g(gy.size());
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const double* yr = vy + r * d;
                    const double* gr = gy.data() + r * d;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
                    for (std::int64_t i = 0; i < d; ++i) {
                      g[static_cast<std::size_t>(r * d + i)] = yr[i] * (gr[i] - dot);
                    }
                  }
                  tape.accumulate(p[0], g);
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm on rank-0 tensor");
  const std::int64_t d = x.dim(x.rank() - 1);
  if (d < 1 || eps <= 0.0) throw ContractError("layer_norm: d >= 1 and eps > 0 required");
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs feature dim " + std::to_string(d));
  }
  const std::int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mean = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      double t = row[i] - mean;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = inv;
    for (std::int64_t i = 0; i < d; ++i) {
      double h = (row[i] - mean) * inv;
      (*xhat)[static_cast<std::size_t>(r * d + i)] = h;
      out[static_cast<std::size_t>(r * d + i)] = pg[i] * h + pb[i];
    }
  }
  Tensor y(x.shape(), std::move(out));
  auto gbuf = gamma.buf();
  return finish(std::move(y), {&x, &gamma, &beta},
                [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
                  const double* vg = gbuf->data();
                  if (p[0] >= 0) {
                    std::vector<double> gx(gy.size());
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const double* gr = gy.data() + r * d;
                      const double* hr = xhat->data() + r * d;
                      double inv = (*inv_std)[static_cast<std::size_t>(r)];
                      double m1 = 0.0, m2 = 0.0;
                      for (std::int64_t i = 0; i < d; ++i) {
                        double gh = gr[i] * vg[i];
                        m1 += gh;
                        m2 += gh * hr[i];
                      }
                      m1 /= static_cast<double>(d);
                      m2 /= static_cast<double>(d);
                      for (std::int64_t i = 0; i < d; ++i) {
                        double gh = gr[i] * vg[i];
                        gx[static_cast<std::size_t>(r * d + i)] = inv * (gh - m1 - hr[i] * m2);
                      }
                    }
                    tape.accumulate(p[0], gx);
                  }
                  if (p[1] >= 0) {
                    std::vector<double> gg(static_cast<std::size_t>(d), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t i = 0; i < d; ++i) {
                        gg[static_cast<std::size_t>(i)] +=
                            gy[static_cast<std::size_t>(r * d + i)] *
                            (*xhat)[static_cast<std::size_t>(r * d + i)];
                      }
                    }
                    tape.accumulate(p[1], gg);
                  }
                  if (p[2] >= 0) {
                    std::vector<double> gb2(static_cast<std::size_t>(d), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t i = 0; i < d; ++i) {
                        gb2[static_cast<std::size_t>(i)] += gy[static_cast<std::size_t>(r * d + i)];
                      }
                    }
                    tape.accumulate(p[2], gb2);
                  }
                });
}

namespace {

void im2col(const double* x, std::int64_t cin, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t ho, std::int64_t wo, double* col) {
  // col is [cin*kh*kw, ho*wo]
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        double* dst = col + ((c * kh + i) * kw + j) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          std::int64_t sy = oy * stride - pad + i;
          if (sy < 0 || sy >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, 0.0);
            continue;
          }
          const double* srow = x + (c * h + sy) * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            std::int64_t sx = ox * stride - pad + j;
            dst[oy * wo + ox] = (sx >= 0 && sx < w) ? srow[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::int64_t cin, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t ho, std::int64_t wo, double* x) {
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        const double* src = col + ((c * kh + i) * kw + j) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          std::int64_t sy = oy * stride - pad + i;
          if (sy < 0 || sy >= h) continue;
          double* xrow = x + (c * h + sy) * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            std::int64_t sx = ox * stride - pad + j;
            if (sx >= 0 && sx < w) xrow[sx] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d expects x [B,Cin,H,W] and w [Cout,Cin,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), width = x.dim(3);
  const std::int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d channel mismatch: x " + shape_str(x.shape()) + " vs w " +
                         shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != cout) {
    throw DimensionError("conv2d bias size " + std::to_string(bias.size()) +
                         " vs out channels " + std::to_string(cout));
  }
  const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t wo = (width + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw DimensionError("conv2d: non-positive output extent for input " +
                         shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
  }
  const std::int64_t ckk = cin * kh * kw;
  std::vector<double> out(static_cast<std::size_t>(b * cout * ho * wo));
  std::vector<double> col(static_cast<std::size_t>(ckk * ho * wo));
  const double* px = x.data();
  const double* pw = w.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    im2col(px + bi * cin * h * width, cin, h, width, kh, kw, stride, pad, ho, wo, col.data());
    CMapMat W(pw, cout, ckk);
    CMapMat C(col.data(), ckk, ho * wo);
    MapMat Y(out.data() + bi * cout * ho * wo, cout, ho * wo);
    Y.noalias() = W * C;
    if (has_bias) {
      const double* pb = bias.data();
      for (std::int64_t co = 0; co < cout; ++co) {
        Y.row(co).array() += pb[co];
      }
    }
  }
  Tensor y({b, cout, ho, wo}, std::move(out));
  auto xbuf = x.buf();
  auto wbuf = w.buf();
  BackFn back = [=](Tape& tape, const std::vector<double>& gy, const std::vector<int>& p) {
    std::vector<double> bcol(static_cast<std::size_t>(ckk * ho * wo));
    const double* vx = xbuf->data();
    const double* vw = wbuf->data();
    std::vector<double> gw;
    std::vector<double> gx;
    std::vector<double> gb;
    if (p[0] >= 0) gx.assign(xbuf->size(), 0.0);
    if (p[1] >= 0) gw.assign(wbuf->size(), 0.0);
    if (p.size() > 2 && p[2] >= 0) gb.assign(static_cast<std::size_t>(cout), 0.0);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      CMapMat G(gy.data() + bi * cout * ho * wo, cout, ho * wo);
      if (p[1] >= 0) {
        im2col(vx + bi * cin * h * width, cin, h, width, kh, kw, stride, pad, ho, wo,
               bcol.data());
        CMapMat C(bcol.data(), ckk, ho * wo);
        MapMat GW(gw.data(), cout, ckk);
        GW.noalias() += G * C.transpose();
      }
      if (p[0] >= 0) {
        CMapMat W(vw, cout, ckk);
        MapMat GC(bcol.data(), ckk, ho * wo);
        GC.noalias() = W.transpose() * G;
        col2im(bcol.data(), cin, h, width, kh, kw, stride, pad, ho, wo,
               gx.data() + bi * cin * h * width);
      }
      if (!gb.empty()) {
        for (std::int64_t co = 0; co < cout; ++co) {
          gb[static_cast<std::size_t>(co)] += G.row(co).sum();
        }
      }
    }
    if (p[0] >= 0) tape.accumulate(p[0], gx);
    if (p[1] >= 0) tape.accumulate(p[1], gw);
    if (p.size() > 2 && p[2] >= 0) tape.accumulate(p[2], gb);
  };
  if (has_bias) {
    return finish(std::move(y), {&x, &w, &bias}, std::move(back));
  }
  return finish(std::move(y), {&x, &w}, std::move(back));
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t pad) {
  return conv2d(x, w, Tensor(), stride, pad);
}

}  // namespace ipt
