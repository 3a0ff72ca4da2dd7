#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spot/tensor.hpp"

namespace spot {

enum class Padding { Same, Valid };

enum class Act { LeakyRelu01, Relu, Sigmoid };

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
}

// Output extent and leading pad for one spatial axis.
inline std::pair<int, int> conv_axis(int in, int kernel, int stride, Padding pad,
                                     const char* axis) {
  if (pad == Padding::Same) {
    int out = (in + stride - 1) / stride;
    int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};  // floor split: extra pad goes bottom/right
  }
  require(in >= kernel, std::string("conv2d: kernel ") + std::to_string(kernel) +
                            " exceeds input extent " + std::to_string(in) + " on axis " + axis);
  return {(in - kernel) / stride + 1, 0};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  auto an = a.node(), bn = b.node();
  ArrayX<S> v = an->value + bn->value;
  return Tensor<S>::make_result(a.shape(), std::move(v), {an, bn}, [an, bn](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(g);
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  auto an = a.node(), bn = b.node();
  ArrayX<S> v = an->value - bn->value;
  return Tensor<S>::make_result(a.shape(), std::move(v), {an, bn}, [an, bn](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate(g);
    if (bn->requires_grad) bn->accumulate((-g).eval());
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  auto an = a.node(), bn = b.node();
  ArrayX<S> v = an->value * bn->value;
  return Tensor<S>::make_result(a.shape(), std::move(v), {an, bn}, [an, bn](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate((g * bn->value).eval());
    if (bn->requires_grad) bn->accumulate((g * an->value).eval());
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  auto an = a.node();
  ArrayX<S> v = an->value * k;
  return Tensor<S>::make_result(a.shape(), std::move(v), {an}, [an, k](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate((g * k).eval());
  });
}

/// out = keep ? a : b, elementwise over a full-shape 0/1 mask. Kept entries
/// are bitwise copies of a.
template <typename S>
Tensor<S> where_mask(const ArrayX<S>& keep, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("where_mask", a, b);
  detail::require(keep.size() == a.size(), "where_mask: mask length " +
                                               std::to_string(keep.size()) +
                                               " does not match tensor shape " + a.shape().str());
  auto an = a.node(), bn = b.node();
  ArrayX<S> v = (keep > S(0.5)).select(an->value, bn->value);
  return Tensor<S>::make_result(a.shape(), std::move(v), {an, bn},
                                [an, bn, keep](const ArrayX<S>& g) {
                                  if (an->requires_grad) an->accumulate((g * keep).eval());
                                  if (bn->requires_grad)
                                    bn->accumulate((g * (S(1) - keep)).eval());
                                });
}

/// out = keep ? x : x + r. Kept entries are bitwise copies of x, so an
/// all-ones mask leaves x untouched exactly.
template <typename S>
Tensor<S> gated_add(const Tensor<S>& x, const Tensor<S>& r, const ArrayX<S>& keep) {
  detail::require_same_shape("gated_add", x, r);
  detail::require(keep.size() == x.size(), "gated_add: mask length does not match tensor shape " +
                                               x.shape().str());
  auto xn = x.node(), rn = r.node();
  ArrayX<S> v = (keep > S(0.5)).select(xn->value, xn->value + rn->value);
  return Tensor<S>::make_result(x.shape(), std::move(v), {xn, rn},
                                [xn, rn, keep](const ArrayX<S>& g) {
                                  if (xn->requires_grad) xn->accumulate(g);
                                  if (rn->requires_grad)
                                    rn->accumulate((g * (S(1) - keep)).eval());
                                });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
  detail::require(shape.count() == a.size(), "reshape: element count " + a.shape().str() +
                                                 " -> " + shape.str());
  auto an = a.node();
  ArrayX<S> v = an->value;
  return Tensor<S>::make_result(shape, std::move(v), {an}, [an](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate(g);
  });
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape().rank() == 4 && b.shape().rank() == 4,
                  "concat_channels: rank-4 tensors required");
  const Shape &sa = a.shape(), &sb = b.shape();
  detail::require(sa.n() == sb.n() && sa.h() == sb.h() && sa.w() == sb.w(),
                  "concat_channels: batch/spatial mismatch " + sa.str() + " vs " + sb.str());
  const int n = sa.n(), ca = sa.c(), cb = sb.c(), hw = sa.h() * sa.w();
  Shape out_shape{n, ca + cb, sa.h(), sa.w()};
  auto an = a.node(), bn = b.node();
  ArrayX<S> v(out_shape.count());
  for (int i = 0; i < n; ++i) {
    v.segment(static_cast<Eigen::Index>(i) * (ca + cb) * hw, ca * hw) =
        an->value.segment(static_cast<Eigen::Index>(i) * ca * hw, ca * hw);
    v.segment(static_cast<Eigen::Index>(i) * (ca + cb) * hw + ca * hw, cb * hw) =
        bn->value.segment(static_cast<Eigen::Index>(i) * cb * hw, cb * hw);
  }
  return Tensor<S>::make_result(
      std::move(out_shape), std::move(v), {an, bn}, [an, bn, n, ca, cb, hw](const ArrayX<S>& g) {
        if (an->requires_grad) {
          ArrayX<S> ga(static_cast<Eigen::Index>(n) * ca * hw);
          for (int i = 0; i < n; ++i)
            ga.segment(static_cast<Eigen::Index>(i) * ca * hw, ca * hw) =
                g.segment(static_cast<Eigen::Index>(i) * (ca + cb) * hw, ca * hw);
          an->accumulate(ga);
        }
        if (bn->requires_grad) {
          ArrayX<S> gb(static_cast<Eigen::Index>(n) * cb * hw);
          for (int i = 0; i < n; ++i)
            gb.segment(static_cast<Eigen::Index>(i) * cb * hw, cb * hw) =
                g.segment(static_cast<Eigen::Index>(i) * (ca + cb) * hw + ca * hw, cb * hw);
          bn->accumulate(gb);
        }
      });
}

/// Contiguous batch-axis slice: rows [from, from+count) of axis 0.
template <typename S>
Tensor<S> slice_batch(const Tensor<S>& a, int from, int count) {
  const Shape& s = a.shape();
  detail::require(from >= 0 && count >= 1 && from + count <= s[0],
                  "slice_batch: rows [" + std::to_string(from) + ", " +
                      std::to_string(from + count) + ") out of range for " + s.str());
  const Eigen::Index plane = a.size() / s[0];
  std::vector<int> dims;
  dims.push_back(count);
  for (int i = 1; i < s.rank(); ++i) dims.push_back(s[i]);
  Shape out_shape = [&] {
    switch (dims.size()) {
      case 1: return Shape{dims[0]};
      case 2: return Shape{dims[0], dims[1]};
      case 3: return Shape{dims[0], dims[1], dims[2]};
      default: return Shape{dims[0], dims[1], dims[2], dims[3]};
    }
  }();
  auto an = a.node();
  ArrayX<S> v = an->value.segment(from * plane, count * plane);
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {an},
                                [an, from, plane](const ArrayX<S>& g) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  an->grad.segment(from * plane, g.size()) += g;
                                });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  auto an = a.node();
  ArrayX<S> v(1);
  v[0] = an->value.sum();
  return Tensor<S>::make_result(Shape{1}, std::move(v), {an}, [an](const ArrayX<S>& g) {
    if (an->requires_grad) an->accumulate(ArrayX<S>::Constant(an->value.size(), g[0]).eval());
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  auto an = a.node();
  const S inv = S(1) / static_cast<S>(an->value.size());
  ArrayX<S> v(1);
  v[0] = an->value.sum() * inv;
  return Tensor<S>::make_result(Shape{1}, std::move(v), {an}, [an, inv](const ArrayX<S>& g) {
    if (an->requires_grad)
      an->accumulate(ArrayX<S>::Constant(an->value.size(), g[0] * inv).eval());
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> activation(const Tensor<S>& a, Act kind) {
  auto an = a.node();
  ArrayX<S> v;
  switch (kind) {
    case Act::LeakyRelu01:
      v = an->value.max(an->value * S(0.1));
      break;
    case Act::Relu:
      v = an->value.max(S(0));
      break;
    case Act::Sigmoid:
      v = S(1) / (S(1) + (-an->value).exp());
      break;
  }
  return Tensor<S>::make_result(
      a.shape(), std::move(v), {an}, [an, kind](const ArrayX<S>& g) {
        if (!an->requires_grad) return;
        switch (kind) {
          case Act::LeakyRelu01:
            // slope 1 on the identity branch, including exactly 0
            an->accumulate((g * (an->value >= S(0)).select(ArrayX<S>::Constant(g.size(), S(1)),
                                                           ArrayX<S>::Constant(g.size(), S(0.1))))
                               .eval());
            break;
          case Act::Relu:
            an->accumulate((g * (an->value > S(0)).template cast<S>()).eval());
            break;
          case Act::Sigmoid: {
            ArrayX<S> s = S(1) / (S(1) + (-an->value).exp());
            an->accumulate((g * s * (S(1) - s)).eval());
            break;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d — im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const ArrayX<S>& in, int n, int cin, int h, int w, int kernel, int stride, int pad_y,
            int pad_x, int oh, int ow, MatX<S>& cols) {
  const int khw = kernel * kernel;
  cols.resize(static_cast<Eigen::Index>(cin) * khw, static_cast<Eigen::Index>(n) * oh * ow);
  Eigen::Index col = 0;
  for (int img = 0; img < n; ++img) {
    const S* base = in.data() + static_cast<std::ptrdiff_t>(img) * cin * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++col) {
        S* dst = cols.data() + col * cols.rows();
        for (int c = 0; c < cin; ++c) {
          const S* plane = base + static_cast<std::ptrdiff_t>(c) * h * w;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad_y + ky;
            if (iy < 0 || iy >= h) {
              for (int kx = 0; kx < kernel; ++kx) *dst++ = S(0);
              continue;
            }
            const S* row = plane + static_cast<std::ptrdiff_t>(iy) * w;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad_x + kx;
              *dst++ = (ix < 0 || ix >= w) ? S(0) : row[ix];
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatX<S>& cols, int n, int cin, int h, int w, int kernel, int stride,
                int pad_y, int pad_x, int oh, int ow, ArrayX<S>& out) {
  Eigen::Index col = 0;
  for (int img = 0; img < n; ++img) {
    S* base = out.data() + static_cast<std::ptrdiff_t>(img) * cin * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++col) {
        const S* src = cols.data() + col * cols.rows();
        for (int c = 0; c < cin; ++c) {
          S* plane = base + static_cast<std::ptrdiff_t>(c) * h * w;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad_y + ky;
            if (iy < 0 || iy >= h) {
              src += kernel;
              continue;
            }
            S* row = plane + static_cast<std::ptrdiff_t>(iy) * w;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad_x + kx;
              if (ix >= 0 && ix < w) row[ix] += *src;
              ++src;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution over NCHW input with OIHW weights and per-filter bias.
/// Same padding follows the halve-on-stride-2 convention: the split puts
/// any extra pad row/column at the bottom/right.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weights, const Tensor<S>& bias,
                 int stride, Padding padding) {
  detail::require(input.shape().rank() == 4, "conv2d: input must be rank 4 (NCHW), got " +
                                                 input.shape().str());
  detail::require(weights.shape().rank() == 4, "conv2d: weights must be rank 4 (OIHW), got " +
                                                   weights.shape().str());
  detail::require(stride == 1 || stride == 2,
                  "conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  const Shape& si = input.shape();
  const Shape& sw = weights.shape();
  const int n = si.n(), cin = si.c(), h = si.h(), w = si.w();
  const int cout = sw[0], kernel = sw[2];
  detail::require(sw[1] == cin, "conv2d: input channels (axis 1) = " + std::to_string(cin) +
                                    " but weights expect " + std::to_string(sw[1]));
  detail::require(sw[2] == sw[3], "conv2d: non-square kernel " + sw.str());
  detail::require(bias.shape().rank() == 1 && bias.shape()[0] == cout,
                  "conv2d: bias length must equal filter count " + std::to_string(cout) +
                      ", got " + bias.shape().str());

  const auto [oh, pad_y] = detail::conv_axis(h, kernel, stride, padding, "height");
  const auto [ow, pad_x] = detail::conv_axis(w, kernel, stride, padding, "width");
  const Eigen::Index ckk = static_cast<Eigen::Index>(cin) * kernel * kernel;
  const Eigen::Index cols_n = static_cast<Eigen::Index>(n) * oh * ow;
  const Eigen::Index ohw = static_cast<Eigen::Index>(oh) * ow;

  auto in_node = input.node();
  auto w_node = weights.node();
  auto b_node = bias.node();

  MatX<S> cols;
  detail::im2col(in_node->value, n, cin, h, w, kernel, stride, pad_y, pad_x, oh, ow, cols);

  Eigen::Map<const RowMatX<S>> wmap(w_node->value.data(), cout, ckk);
  MatX<S> out_t(cols_n, cout);  // (n*oh*ow) x cout
  out_t.noalias() = cols.transpose() * wmap.transpose();

  Shape out_shape{n, cout, oh, ow};
  ArrayX<S> v(out_shape.count());
  for (int img = 0; img < n; ++img)
    for (int co = 0; co < cout; ++co)
      v.segment((static_cast<Eigen::Index>(img) * cout + co) * ohw, ohw) =
          out_t.col(co).segment(static_cast<Eigen::Index>(img) * ohw, ohw).array() +
          b_node->value[co];

  auto backprop = [in_node, w_node, b_node, cols = std::move(cols), n, cin, h, w, cout, kernel,
                   stride, pad_y = pad_y, pad_x = pad_x, oh = oh, ow = ow, ckk, cols_n,
                   ohw](const ArrayX<S>& g) {
    MatX<S> g_t(cols_n, cout);
    for (int img = 0; img < n; ++img)
      for (int co = 0; co < cout; ++co)
        g_t.col(co).segment(static_cast<Eigen::Index>(img) * ohw, ohw) =
            g.segment((static_cast<Eigen::Index>(img) * cout + co) * ohw, ohw).matrix();
    if (w_node->requires_grad) {
      MatX<S> dw(ckk, cout);  // column-major (ckk x cout) == row-major (cout x ckk)
      dw.noalias() = cols * g_t;
      w_node->ensure_grad();
      w_node->grad += Eigen::Map<const ArrayX<S>>(dw.data(), dw.size());
    }
    if (b_node->requires_grad) {
      b_node->ensure_grad();
      for (int co = 0; co < cout; ++co) b_node->grad[co] += g_t.col(co).sum();
    }
    if (in_node->requires_grad) {
      Eigen::Map<const RowMatX<S>> wmap2(w_node->value.data(), cout, ckk);
      MatX<S> dcols(ckk, cols_n);
      dcols.noalias() = wmap2.transpose() * g_t.transpose();
      in_node->ensure_grad();
      detail::col2im_add(dcols, n, cin, h, w, kernel, stride, pad_y, pad_x, oh, ow,
                         in_node->grad);
    }
  };
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {in_node, w_node, b_node},
                                std::move(backprop));
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Corner-aligned bilinear resize of each NCHW plane.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& input, int out_h, int out_w) {
  detail::require(input.shape().rank() == 4, "resize_bilinear: input must be rank 4 (NCHW)");
  detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dims must be positive, got " +
                                                std::to_string(out_h) + "x" +
                                                std::to_string(out_w));
  const Shape& s = input.shape();
  const int n = s.n(), c = s.c(), h = s.h(), w = s.w();

  struct Tap {
    int lo, hi;
    S frac;
  };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (int i = 0; i < out; ++i) {
      double sp = i * scale;
      int lo = std::min(static_cast<int>(sp), in - 1);
      taps[i] = {lo, std::min(lo + 1, in - 1), static_cast<S>(sp - lo)};
    }
    return taps;
  };
  auto ty = make_taps(h, out_h);
  auto tx = make_taps(w, out_w);

  auto in_node = input.node();
  Shape out_shape{n, c, out_h, out_w};
  ArrayX<S> v(out_shape.count());
  const Eigen::Index planes = static_cast<Eigen::Index>(n) * c;
  for (Eigen::Index p = 0; p < planes; ++p) {
    const S* src = in_node->value.data() + p * h * w;
    S* dst = v.data() + p * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& y = ty[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& x = tx[ox];
        const S top = src[y.lo * w + x.lo] * (S(1) - x.frac) + src[y.lo * w + x.hi] * x.frac;
        const S bot = src[y.hi * w + x.lo] * (S(1) - x.frac) + src[y.hi * w + x.hi] * x.frac;
        *dst++ = top * (S(1) - y.frac) + bot * y.frac;
      }
    }
  }
  auto backprop = [in_node, ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h,
                   out_w](const ArrayX<S>& g) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (Eigen::Index p = 0; p < planes; ++p) {
      S* dst = in_node->grad.data() + p * h * w;
      const S* src = g.data() + p * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& y = ty[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& x = tx[ox];
          const S gv = *src++;
          dst[y.lo * w + x.lo] += gv * (S(1) - y.frac) * (S(1) - x.frac);
          dst[y.lo * w + x.hi] += gv * (S(1) - y.frac) * x.frac;
          dst[y.hi * w + x.lo] += gv * y.frac * (S(1) - x.frac);
          dst[y.hi * w + x.hi] += gv * y.frac * x.frac;
        }
      }
    }
  };
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {in_node},
                                std::move(backprop));
}

/// Nearest-neighbor upsampling by integer block replication.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& input, int target_h, int target_w) {
  detail::require(input.shape().rank() == 4, "upsample_nearest: input must be rank 4 (NCHW)");
  const Shape& s = input.shape();
  const int h = s.h(), w = s.w();
  detail::require(target_h >= h && target_h % h == 0 && target_w >= w && target_w % w == 0,
                  "upsample_nearest: target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " is not an integer multiple of " +
                      std::to_string(h) + "x" + std::to_string(w));
  const int fy = target_h / h, fx = target_w / w;
  const int n = s.n(), c = s.c();
  auto in_node = input.node();
  Shape out_shape{n, c, target_h, target_w};
  ArrayX<S> v(out_shape.count());
  const Eigen::Index planes = static_cast<Eigen::Index>(n) * c;
  for (Eigen::Index p = 0; p < planes; ++p) {
    const S* src = in_node->value.data() + p * h * w;
    S* dst = v.data() + p * target_h * target_w;
    for (int oy = 0; oy < target_h; ++oy)
      for (int ox = 0; ox < target_w; ++ox) *dst++ = src[(oy / fy) * w + ox / fx];
  }
  auto backprop = [in_node, planes, h, w, target_h, target_w, fy, fx](const ArrayX<S>& g) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (Eigen::Index p = 0; p < planes; ++p) {
      S* dst = in_node->grad.data() + p * h * w;
      const S* src = g.data() + p * target_h * target_w;
      for (int oy = 0; oy < target_h; ++oy)
        for (int ox = 0; ox < target_w; ++ox) dst[(oy / fy) * w + ox / fx] += *src++;
    }
  };
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {in_node},
                                std::move(backprop));
}

/// Nearest-neighbor reduction by integer stride picking (top-left of each
/// block); used to align head feature maps with the mask grid.
template <typename S>
Tensor<S> downsample_nearest(const Tensor<S>& input, int target_h, int target_w) {
  detail::require(input.shape().rank() == 4, "downsample_nearest: input must be rank 4 (NCHW)");
  const Shape& s = input.shape();
  const int h = s.h(), w = s.w();
  detail::require(target_h >= 1 && h % target_h == 0 && target_w >= 1 && w % target_w == 0,
                  "downsample_nearest: input " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not an integer multiple of target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w));
  const int fy = h / target_h, fx = w / target_w;
  const int n = s.n(), c = s.c();
  auto in_node = input.node();
  Shape out_shape{n, c, target_h, target_w};
  ArrayX<S> v(out_shape.count());
  const Eigen::Index planes = static_cast<Eigen::Index>(n) * c;
  for (Eigen::Index p = 0; p < planes; ++p) {
    const S* src = in_node->value.data() + p * h * w;
    S* dst = v.data() + p * target_h * target_w;
    for (int oy = 0; oy < target_h; ++oy)
      for (int ox = 0; ox < target_w; ++ox) *dst++ = src[oy * fy * w + ox * fx];
  }
  auto backprop = [in_node, planes, h, w, target_h, target_w, fy, fx](const ArrayX<S>& g) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (Eigen::Index p = 0; p < planes; ++p) {
      S* dst = in_node->grad.data() + p * h * w;
      const S* src = g.data() + p * target_h * target_w;
      for (int oy = 0; oy < target_h; ++oy)
        for (int ox = 0; ox < target_w; ++ox) dst[oy * fy * w + ox * fx] += *src++;
    }
  };
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {in_node},
                                std::move(backprop));
}

/// 3x3 uniform average with stride 1 and edge-replicate padding; output
/// shape equals input shape and constants pass through unchanged.
template <typename S>
Tensor<S> avg_pool3(const Tensor<S>& input) {
  detail::require(input.shape().rank() == 4, "avg_pool3: input must be rank 4 (NCHW)");
  const Shape& s = input.shape();
  const int h = s.h(), w = s.w();
  auto in_node = input.node();
  ArrayX<S> v(in_node->value.size());
  const Eigen::Index planes = static_cast<Eigen::Index>(s.n()) * s.c();
  const S inv9 = S(1) / S(9);
  auto clampi = [](int x, int hi) { return x < 0 ? 0 : (x > hi ? hi : x); };
  for (Eigen::Index p = 0; p < planes; ++p) {
    const S* src = in_node->value.data() + p * h * w;
    S* dst = v.data() + p * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S acc = S(0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += src[clampi(y + dy, h - 1) * w + clampi(x + dx, w - 1)];
        dst[y * w + x] = acc * inv9;
      }
  }
  auto backprop = [in_node, planes, h, w, inv9, clampi](const ArrayX<S>& g) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (Eigen::Index p = 0; p < planes; ++p) {
      S* dst = in_node->grad.data() + p * h * w;
      const S* src = g.data() + p * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const S gv = src[y * w + x] * inv9;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              dst[clampi(y + dy, h - 1) * w + clampi(x + dx, w - 1)] += gv;
        }
    }
  };
  return Tensor<S>::make_result(s, std::move(v), {in_node}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormState {
  Tensor<S> gamma, beta;  // learnable, per channel
  ArrayX<S> running_mean, running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);

  static BatchNormState create(int channels) {
    BatchNormState st;
    st.gamma = Tensor<S>::param(Shape{channels}, ArrayX<S>::Ones(channels));
    st.beta = Tensor<S>::param(Shape{channels}, ArrayX<S>::Zero(channels));
    st.running_mean = ArrayX<S>::Zero(channels);
    st.running_var = ArrayX<S>::Ones(channels);
    return st;
  }
  int channels() const { return static_cast<int>(running_mean.size()); }
};

/// Channelwise batch normalization over (N, H, W). Training mode uses batch
/// statistics and folds them into the running estimates; inference mode is a
/// fixed affine map from the running estimates. Differentiable w.r.t. input,
/// gamma and beta in both modes.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& input, BatchNormState<S>& state, bool training) {
  detail::require(input.shape().rank() == 4, "batch_norm: input must be rank 4 (NCHW)");
  const Shape& s = input.shape();
  const int n = s.n(), c = s.c(), hw = s.h() * s.w();
  detail::require(c == state.channels(), "batch_norm: channel axis = " + std::to_string(c) +
                                             " but state holds " +
                                             std::to_string(state.channels()) + " channels");
  auto in_node = input.node();
  auto g_node = state.gamma.node();
  auto b_node = state.beta.node();
  const Eigen::Index m = static_cast<Eigen::Index>(n) * hw;  // elements per channel

  ArrayX<S> mean(c), invstd(c);
  auto channel = [&](const ArrayX<S>& buf, int img, int ch) {
    return Eigen::Map<const ArrayX<S>>(
        buf.data() + (static_cast<Eigen::Index>(img) * c + ch) * hw, hw);
  };
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      S acc = S(0);
      for (int img = 0; img < n; ++img) acc += channel(in_node->value, img, ch).sum();
      mean[ch] = acc / static_cast<S>(m);
      S var = S(0);
      for (int img = 0; img < n; ++img)
        var += (channel(in_node->value, img, ch) - mean[ch]).square().sum();
      var /= static_cast<S>(m);
      state.running_mean[ch] = (S(1) - state.momentum) * state.running_mean[ch] +
                               state.momentum * mean[ch];
      state.running_var[ch] = (S(1) - state.momentum) * state.running_var[ch] +
                              state.momentum * var;
      invstd[ch] = S(1) / std::sqrt(var + state.eps);
    }
  } else {
    mean = state.running_mean;
    invstd = (state.running_var + state.eps).sqrt().inverse();
  }

  ArrayX<S> xhat(in_node->value.size());
  ArrayX<S> v(in_node->value.size());
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index off = (static_cast<Eigen::Index>(img) * c + ch) * hw;
      auto xh = (channel(in_node->value, img, ch) - mean[ch]) * invstd[ch];
      xhat.segment(off, hw) = xh;
      v.segment(off, hw) = xh * g_node->value[ch] + b_node->value[ch];
    }

  auto backprop = [in_node, g_node, b_node, xhat = std::move(xhat), invstd = std::move(invstd),
                   n, c, hw, m, training](const ArrayX<S>& g) {
    ArrayX<S> sum_g(c), sum_gx(c);
    for (int ch = 0; ch < c; ++ch) {
      S sg = S(0), sgx = S(0);
      for (int img = 0; img < n; ++img) {
        const Eigen::Index off = (static_cast<Eigen::Index>(img) * c + ch) * hw;
        auto gm = Eigen::Map<const ArrayX<S>>(g.data() + off, hw);
        sg += gm.sum();
        sgx += (gm * Eigen::Map<const ArrayX<S>>(xhat.data() + off, hw)).sum();
      }
      sum_g[ch] = sg;
      sum_gx[ch] = sgx;
    }
    if (g_node->requires_grad) {
      g_node->ensure_grad();
      g_node->grad += sum_gx;
    }
    if (b_node->requires_grad) {
      b_node->ensure_grad();
      b_node->grad += sum_g;
    }
    if (in_node->requires_grad) {
      in_node->ensure_grad();
      for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
          const Eigen::Index off = (static_cast<Eigen::Index>(img) * c + ch) * hw;
          auto gm = Eigen::Map<const ArrayX<S>>(g.data() + off, hw);
          auto xh = Eigen::Map<const ArrayX<S>>(xhat.data() + off, hw);
          auto dst = Eigen::Map<ArrayX<S>>(in_node->grad.data() + off, hw);
          const S gamma = g_node->value[ch];
          if (training) {
            // full backward through the batch statistics
            dst += gamma * invstd[ch] *
                   (gm - sum_g[ch] / static_cast<S>(m) -
                    xh * sum_gx[ch] / static_cast<S>(m));
          } else {
            dst += gamma * invstd[ch] * gm;
          }
        }
    }
  };
  return Tensor<S>::make_result(s, std::move(v), {in_node, g_node, b_node}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// Dense (affine) layer
// ---------------------------------------------------------------------------

/// y = flatten(x) W^T + b. Input of any rank is flattened per batch item.
template <typename S>
Tensor<S> dense(const Tensor<S>& input, const Tensor<S>& weights, const Tensor<S>& bias) {
  detail::require(input.shape().rank() >= 2, "dense: input must have a batch axis");
  detail::require(weights.shape().rank() == 2, "dense: weights must be rank 2 (out x in), got " +
                                                   weights.shape().str());
  const int n = input.shape()[0];
  const Eigen::Index f = input.size() / n;
  const int out = weights.shape()[0];
  detail::require(weights.shape()[1] == f,
                  "dense: flattened input length " + std::to_string(f) +
                      " does not match weight columns " + std::to_string(weights.shape()[1]));
  detail::require(bias.shape().rank() == 1 && bias.shape()[0] == out,
                  "dense: bias length must be " + std::to_string(out) + ", got " +
                      bias.shape().str());
  auto in_node = input.node();
  auto w_node = weights.node();
  auto b_node = bias.node();

  Eigen::Map<const RowMatX<S>> x(in_node->value.data(), n, f);
  Eigen::Map<const RowMatX<S>> wm(w_node->value.data(), out, f);
  Shape out_shape{n, out};
  ArrayX<S> v(out_shape.count());
  Eigen::Map<RowMatX<S>> o(v.data(), n, out);
  o.noalias() = x * wm.transpose();
  o.rowwise() += b_node->value.matrix().transpose();

  auto backprop = [in_node, w_node, b_node, n, f, out](const ArrayX<S>& g) {
    Eigen::Map<const RowMatX<S>> gm(g.data(), n, out);
    Eigen::Map<const RowMatX<S>> x2(in_node->value.data(), n, f);
    Eigen::Map<const RowMatX<S>> wm2(w_node->value.data(), out, f);
    if (w_node->requires_grad) {
      w_node->ensure_grad();
      Eigen::Map<RowMatX<S>> dw(w_node->grad.data(), out, f);
      dw.noalias() += gm.transpose() * x2;
    }
    if (b_node->requires_grad) {
      b_node->ensure_grad();
      b_node->grad.matrix() += gm.colwise().sum().transpose();
    }
    if (in_node->requires_grad) {
      in_node->ensure_grad();
      Eigen::Map<RowMatX<S>> dx(in_node->grad.data(), n, f);
      dx.noalias() += gm * wm2;
    }
  };
  return Tensor<S>::make_result(std::move(out_shape), std::move(v), {in_node, w_node, b_node},
                                std::move(backprop));
}

}  // namespace spot
