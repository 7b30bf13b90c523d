#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfds/blas.hpp"
#include "mfds/tensor.hpp"

// Dense numeric kernels behind the autograd ops: im2col convolution,
// depthwise convolution, bilinear resampling, pooling, softmax and batched
// matmul, each with its adjoint. Everything is plain Tensor -> Tensor so the
// test suite can drive them against brute-force oracles directly.
namespace mfds {

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  int eff = dilation * (k - 1) + 1;
  return (in + 2 * pad - eff) / stride + 1;
}

template <typename T>
void check_conv_args(const Tensor<T>& x, int c_in, int kh, int kw, const ConvSpec& s) {
  check(x.c == c_in, "conv: input has ", x.c, " channels, kernel expects c_in=", c_in);
  check(s.stride >= 1, "conv: stride must be >= 1, got ", s.stride);
  check(s.pad >= 0, "conv: padding must be >= 0, got ", s.pad);
  check(s.dilation >= 1, "conv: dilation must be >= 1, got ", s.dilation);
  check(conv_out_dim(x.h, kh, s.stride, s.pad, s.dilation) >= 1,
        "conv: input height ", x.h, " smaller than kernel extent ",
        s.dilation * (kh - 1) + 1, " after padding ", s.pad);
  check(conv_out_dim(x.w, kw, s.stride, s.pad, s.dilation) >= 1,
        "conv: input width ", x.w, " smaller than kernel extent ",
        s.dilation * (kw - 1) + 1, " after padding ", s.pad);
}

// col is (c_in*kh*kw) x (oh*ow), row-major, for batch element b.
template <typename T>
void im2col(const Tensor<T>& x, int b, int kh, int kw, const ConvSpec& s, T* col) {
  const int oh = conv_out_dim(x.h, kh, s.stride, s.pad, s.dilation);
  const int ow = conv_out_dim(x.w, kw, s.stride, s.pad, s.dilation);
  const int64_t plane = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < x.c; ++c) {
    const T* src = x.plane(b, c);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * s.stride - s.pad + ky * s.dilation;
          T* row = dst + static_cast<int64_t>(oy) * ow;
          if (iy < 0 || iy >= x.h) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<int64_t>(iy) * x.w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * s.stride - s.pad + kx * s.dilation;
            row[ox] = (ix >= 0 && ix < x.w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int kh, int kw, const ConvSpec& s,
                Tensor<T>& dx, int b) {
  const int oh = conv_out_dim(h, kh, s.stride, s.pad, s.dilation);
  const int ow = conv_out_dim(w, kw, s.stride, s.pad, s.dilation);
  const int64_t plane = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < c_in; ++c) {
    T* dst = dx.plane(b, c);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<int64_t>(oy) * ow;
          T* drow = dst + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// weight is (c_out, c_in, kh, kw); bias, when present, has c_out elements.
// When keep_cols is supplied the per-batch im2col buffers are retained there
// (B * ckk * ohw) so the backward pass can skip regathering them.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                         const ConvSpec& s, std::vector<T>* keep_cols = nullptr) {
  check_conv_args(x, weight.c, weight.h, weight.w, s);
  const int c_out = weight.n, kh = weight.h, kw = weight.w;
  const int oh = conv_out_dim(x.h, kh, s.stride, s.pad, s.dilation);
  const int ow = conv_out_dim(x.w, kw, s.stride, s.pad, s.dilation);
  const int ckk = x.c * kh * kw;
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  Tensor<T> y(x.n, c_out, oh, ow);
  const bool unit = kh == 1 && kw == 1 && s.stride == 1 && s.pad == 0;
  std::vector<T> col;
  std::vector<T>* cols = nullptr;
  if (!unit) {
    cols = keep_cols ? keep_cols : &col;
    cols->resize(static_cast<size_t>(x.n) * ckk * ohw);
  }
  for (int b = 0; b < x.n; ++b) {
    const T* cptr = unit ? x.plane(b, 0)
                         : cols->data() + static_cast<size_t>(keep_cols ? b : 0) * ckk * ohw;
    if (!unit)
      im2col(x, b, kh, kw, s,
             cols->data() + static_cast<size_t>(keep_cols ? b : 0) * ckk * ohw);
    gemm(false, false, c_out, static_cast<int>(ohw), ckk, T(1), weight.ptr(), ckk, cptr,
         static_cast<int>(ohw), T(0), y.plane(b, 0), static_cast<int>(ohw));
  }
  if (!unit && !keep_cols) col.clear();
  if (bias) {
    check(bias->size() == c_out, "conv: bias has ", bias->size(), " entries, expected ", c_out);
    for (int b = 0; b < x.n; ++b)
      for (int c = 0; c < c_out; ++c) {
        T* p = y.plane(b, c);
        T bv = bias->data[c];
        for (int64_t i = 0; i < ohw; ++i) p[i] += bv;
      }
  }
  return y;
}

// Any of dx/dw/db may be null. dw/db accumulate (caller zero-initializes).
// cached_cols, when non-null, holds the forward pass's im2col buffers.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     const ConvSpec& s, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db,
                     const std::vector<T>* cached_cols = nullptr) {
  const int c_out = weight.n, kh = weight.h, kw = weight.w;
  const int ckk = x.c * kh * kw;
  const int64_t ohw = static_cast<int64_t>(dy.h) * dy.w;
  const bool unit = kh == 1 && kw == 1 && s.stride == 1 && s.pad == 0;
  std::vector<T> col, dcol;
  if (!unit && dw && !cached_cols) col.resize(static_cast<size_t>(ckk) * ohw);
  if (dx && !unit) dcol.resize(static_cast<size_t>(ckk) * ohw);
  for (int b = 0; b < x.n; ++b) {
    const T* cptr = nullptr;
    if (dw) {
      if (unit) {
        cptr = x.plane(b, 0);
      } else if (cached_cols) {
        cptr = cached_cols->data() + static_cast<size_t>(b) * ckk * ohw;
      } else {
        im2col(x, b, kh, kw, s, col.data());
        cptr = col.data();
      }
      gemm(false, true, c_out, ckk, static_cast<int>(ohw), T(1), dy.plane(b, 0),
           static_cast<int>(ohw), cptr, static_cast<int>(ohw), T(1), dw->ptr(), ckk);
    }
    if (dx) {
      T* dcptr = unit ? dx->plane(b, 0) : dcol.data();
      gemm(true, false, ckk, static_cast<int>(ohw), c_out, T(1), weight.ptr(), ckk,
           dy.plane(b, 0), static_cast<int>(ohw), unit ? T(1) : T(0), dcptr,
           static_cast<int>(ohw));
      if (!unit) col2im_add(dcol.data(), x.c, x.h, x.w, kh, kw, s, *dx, b);
    }
    if (db)
      for (int c = 0; c < c_out; ++c) {
        const T* p = dy.plane(b, c);
        T acc = T(0);
        for (int64_t i = 0; i < ohw; ++i) acc += p[i];
        db->data[c] += acc;
      }
  }
}

namespace detail {

// Patch matrix of one channel: (kh*kw) x (oh*ow), row-major.
template <typename T>
void channel_im2col(const T* src, int h, int w, int kh, int kw, const ConvSpec& s, T* col) {
  const int oh = conv_out_dim(h, kh, s.stride, s.pad, 1);
  const int ow = conv_out_dim(w, kw, s.stride, s.pad, 1);
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx) {
      T* dst = col + (static_cast<int64_t>(ky) * kw + kx) * ohw;
      for (int oy = 0; oy < oh; ++oy) {
        int iy = oy * s.stride - s.pad + ky;
        T* row = dst + static_cast<int64_t>(oy) * ow;
        if (iy < 0 || iy >= h) {
          std::fill(row, row + ow, T(0));
          continue;
        }
        const T* srow = src + static_cast<int64_t>(iy) * w;
        for (int ox = 0; ox < ow; ++ox) {
          int ix = ox * s.stride - s.pad + kx;
          row[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
        }
      }
    }
}

template <typename T>
void channel_col2im_add(const T* col, int h, int w, int kh, int kw, const ConvSpec& s, T* dst) {
  const int oh = conv_out_dim(h, kh, s.stride, s.pad, 1);
  const int ow = conv_out_dim(w, kw, s.stride, s.pad, 1);
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx) {
      const T* src = col + (static_cast<int64_t>(ky) * kw + kx) * ohw;
      for (int oy = 0; oy < oh; ++oy) {
        int iy = oy * s.stride - s.pad + ky;
        if (iy < 0 || iy >= h) continue;
        const T* srow = src + static_cast<int64_t>(oy) * ow;
        T* drow = dst + static_cast<int64_t>(iy) * w;
        for (int ox = 0; ox < ow; ++ox) {
          int ix = ox * s.stride - s.pad + kx;
          if (ix >= 0 && ix < w) drow[ix] += srow[ox];
        }
      }
    }
}

// D slice for one input channel as a contiguous (taps x d_mul) matrix.
template <typename T>
void depthwise_slice(const Tensor<T>& D, int c, T* out) {
  const int taps = D.n, d_mul = D.c;
  for (int s = 0; s < taps; ++s)
    for (int m = 0; m < d_mul; ++m) out[s * d_mul + m] = D.at(s, m, c, 0);
}

}  // namespace detail

// Depthwise operator D is (kh*kw, d_mul, c_in, 1); output channel order is
// c*d_mul + m, i.e. the d_mul slices of one input channel stay adjacent.
// Each (batch, channel) runs one small GEMM over the channel's patch matrix.
template <typename T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& D, int kh, int kw,
                            const ConvSpec& s) {
  check(s.dilation == 1, "depthwise: dilation unsupported");
  const int d_mul = D.c, c_in = D.h, taps = kh * kw;
  check(D.n == taps, "depthwise: D tap dim ", D.n, " != kernel taps ", taps);
  check(x.c == c_in, "depthwise: input has ", x.c, " channels, D expects ", c_in);
  check(d_mul >= 1, "depthwise: d_mul must be >= 1, got ", d_mul);
  const int oh = conv_out_dim(x.h, kh, s.stride, s.pad, 1);
  const int ow = conv_out_dim(x.w, kw, s.stride, s.pad, 1);
  check(oh >= 1 && ow >= 1, "depthwise: input ", x.h, "x", x.w, " smaller than kernel ", kh, "x",
        kw, " after padding ", s.pad);
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  Tensor<T> y(x.n, c_in * d_mul, oh, ow);
  if (taps == 1 && s.stride == 1 && s.pad == 0) {
    // 1x1 kernels reduce to a per-channel scale.
    for (int b = 0; b < x.n; ++b)
      for (int c = 0; c < c_in; ++c) {
        const T* src = x.plane(b, c);
        for (int m = 0; m < d_mul; ++m) {
          T coeff = D.at(0, m, c, 0);
          T* dst = y.plane(b, c * d_mul + m);
          for (int64_t i = 0; i < ohw; ++i) dst[i] = coeff * src[i];
        }
      }
    return y;
  }
  if (kh == 3 && kw == 3 && s.stride == 1 && s.pad == 1) {
    // Single fused pass per multiplier over a zero-padded plane; one output
    // write instead of nine read-modify-write sweeps.
    const int pw = x.w + 2;
    std::vector<T> padded(static_cast<size_t>(x.h + 2) * pw, T(0));
    for (int b = 0; b < x.n; ++b)
      for (int c = 0; c < c_in; ++c) {
        const T* src = x.plane(b, c);
        for (int yy = 0; yy < x.h; ++yy)
          std::copy(src + static_cast<int64_t>(yy) * x.w, src + static_cast<int64_t>(yy + 1) * x.w,
                    padded.data() + static_cast<int64_t>(yy + 1) * pw + 1);
        for (int m = 0; m < d_mul; ++m) {
          T k[9];
          for (int t = 0; t < 9; ++t) k[t] = D.at(t, m, c, 0);
          T* __restrict__ dst = y.plane(b, c * d_mul + m);
          for (int oy = 0; oy < oh; ++oy) {
            const T* __restrict__ r0 = padded.data() + static_cast<int64_t>(oy) * pw;
            const T* __restrict__ r1 = r0 + pw;
            const T* __restrict__ r2 = r1 + pw;
            T* __restrict__ o = dst + static_cast<int64_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox)
              o[ox] = k[0] * r0[ox] + k[1] * r0[ox + 1] + k[2] * r0[ox + 2] +
                      k[3] * r1[ox] + k[4] * r1[ox + 1] + k[5] * r1[ox + 2] +
                      k[6] * r2[ox] + k[7] * r2[ox + 1] + k[8] * r2[ox + 2];
          }
        }
      }
    return y;
  }
  // Shifted-plane accumulation; the inner loop is contiguous for stride 1.
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < c_in; ++c) {
      const T* src = x.plane(b, c);
      for (int m = 0; m < d_mul; ++m) {
        T* dst = y.plane(b, c * d_mul + m);
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            T coeff = D.at(ky * kw + kx, m, c, 0);
            if (coeff == T(0)) continue;
            int lo = std::max(0, (s.pad - kx + s.stride - 1) / s.stride);
            int hi = std::min(ow - 1, (x.w - 1 + s.pad - kx) / s.stride);
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= x.h) continue;
              const T* srow = src + static_cast<int64_t>(iy) * x.w;
              T* drow = dst + static_cast<int64_t>(oy) * ow;
              for (int ox = lo; ox <= hi; ++ox)
                drow[ox] += coeff * srow[ox * s.stride - s.pad + kx];
            }
          }
      }
    }
  return y;
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& D, const Tensor<T>& dy, int kh,
                        int kw, const ConvSpec& s, Tensor<T>* dx, Tensor<T>* dD) {
  const int d_mul = D.c, c_in = D.h, taps = kh * kw;
  const int64_t ohw = static_cast<int64_t>(dy.h) * dy.w;
  if (taps == 1 && s.stride == 1 && s.pad == 0) {
    for (int b = 0; b < x.n; ++b)
      for (int c = 0; c < c_in; ++c) {
        const T* src = x.plane(b, c);
        T* dsrc = dx ? dx->plane(b, c) : nullptr;
        for (int m = 0; m < d_mul; ++m) {
          const T* g = dy.plane(b, c * d_mul + m);
          if (dD) {
            T acc = T(0);
            for (int64_t i = 0; i < ohw; ++i) acc += g[i] * src[i];
            dD->at(0, m, c, 0) += acc;
          }
          if (dsrc) {
            T coeff = D.at(0, m, c, 0);
            for (int64_t i = 0; i < ohw; ++i) dsrc[i] += coeff * g[i];
          }
        }
      }
    return;
  }
  std::vector<T> col(static_cast<size_t>(taps) * ohw);
  std::vector<T> dcol(dx ? static_cast<size_t>(taps) * ohw : 0);
  std::vector<T> dslice(static_cast<size_t>(taps) * d_mul);
  std::vector<T> dslice_grad(static_cast<size_t>(taps) * d_mul);
  for (int c = 0; c < c_in; ++c) {
    if (dx) detail::depthwise_slice(D, c, dslice.data());
    std::fill(dslice_grad.begin(), dslice_grad.end(), T(0));
    for (int b = 0; b < x.n; ++b) {
      const T* g = dy.plane(b, c * d_mul);  // d_mul contiguous planes
      if (dD) {
        detail::channel_im2col(x.plane(b, c), x.h, x.w, kh, kw, s, col.data());
        gemm(false, true, taps, d_mul, static_cast<int>(ohw), T(1), col.data(),
             static_cast<int>(ohw), g, static_cast<int>(ohw), T(1), dslice_grad.data(), d_mul);
      }
      if (dx) {
        gemm(false, false, taps, static_cast<int>(ohw), d_mul, T(1), dslice.data(), d_mul, g,
             static_cast<int>(ohw), T(0), dcol.data(), static_cast<int>(ohw));
        detail::channel_col2im_add(dcol.data(), x.h, x.w, kh, kw, s, dx->plane(b, c));
      }
    }
    if (dD)
      for (int t = 0; t < taps; ++t)
        for (int m = 0; m < d_mul; ++m) dD->at(t, m, c, 0) += dslice_grad[t * d_mul + m];
  }
}

namespace detail {
// Half-pixel-center source coordinates with edge clamping.
inline void bilinear_axis(int out, int in, std::vector<int>& i0, std::vector<int>& i1,
                          std::vector<double>& w1) {
  i0.resize(out);
  i1.resize(out);
  w1.resize(out);
  double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    int lo = static_cast<int>(std::floor(src));
    double f = src - lo;
    int hi = lo + 1;
    if (lo < 0) lo = 0;
    if (hi < 0) hi = 0;
    if (lo > in - 1) lo = in - 1;
    if (hi > in - 1) hi = in - 1;
    i0[o] = lo;
    i1[o] = hi;
    w1[o] = f < 0 ? 0 : (f > 1 ? 1 : f);
  }
}
}  // namespace detail

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
  check(oh >= 1 && ow >= 1, "resize: target dims must be positive, got ", oh, "x", ow);
  if (oh == x.h && ow == x.w) return x;
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  detail::bilinear_axis(oh, x.h, y0, y1, wy);
  detail::bilinear_axis(ow, x.w, x0, x1, wx);
  Tensor<T> y(x.n, x.c, oh, ow);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(b, c);
      T* dst = y.plane(b, c);
      for (int oy = 0; oy < oh; ++oy) {
        const T* r0 = src + static_cast<int64_t>(y0[oy]) * x.w;
        const T* r1 = src + static_cast<int64_t>(y1[oy]) * x.w;
        double fy = wy[oy];
        for (int ox = 0; ox < ow; ++ox) {
          double fx = wx[ox];
          double top = r0[x0[ox]] * (1 - fx) + r0[x1[ox]] * fx;
          double bot = r1[x0[ox]] * (1 - fx) + r1[x1[ox]] * fx;
          *dst++ = static_cast<T>(top * (1 - fy) + bot * fy);
        }
      }
    }
  return y;
}

template <typename T>
void bilinear_resize_backward(const Tensor<T>& dy, int ih, int iw, Tensor<T>& dx) {
  if (dy.h == ih && dy.w == iw) {
    for (int64_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i];
    return;
  }
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  detail::bilinear_axis(dy.h, ih, y0, y1, wy);
  detail::bilinear_axis(dy.w, iw, x0, x1, wx);
  for (int b = 0; b < dy.n; ++b)
    for (int c = 0; c < dy.c; ++c) {
      const T* g = dy.plane(b, c);
      T* dst = dx.plane(b, c);
      for (int oy = 0; oy < dy.h; ++oy) {
        double fy = wy[oy];
        for (int ox = 0; ox < dy.w; ++ox) {
          double fx = wx[ox];
          T gv = *g++;
          dst[static_cast<int64_t>(y0[oy]) * iw + x0[ox]] += static_cast<T>(gv * (1 - fy) * (1 - fx));
          dst[static_cast<int64_t>(y0[oy]) * iw + x1[ox]] += static_cast<T>(gv * (1 - fy) * fx);
          dst[static_cast<int64_t>(y1[oy]) * iw + x0[ox]] += static_cast<T>(gv * fy * (1 - fx));
          dst[static_cast<int64_t>(y1[oy]) * iw + x1[ox]] += static_cast<T>(gv * fy * fx);
        }
      }
    }
}

// Exact block means on a grid that divides the input (adaptive average pool
// restricted to the divisible case; grid 1x1 gives global average pooling).
template <typename T>
Tensor<T> block_avg_pool(const Tensor<T>& x, int gh, int gw) {
  check(gh >= 1 && gw >= 1 && x.h % gh == 0 && x.w % gw == 0, "block_avg_pool: grid ", gh, "x",
        gw, " must divide input ", x.h, "x", x.w);
  const int bh = x.h / gh, bw = x.w / gw;
  const T inv = T(1) / static_cast<T>(bh * bw);
  Tensor<T> y(x.n, x.c, gh, gw);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(b, c);
      T* dst = y.plane(b, c);
      for (int oy = 0; oy < gh; ++oy)
        for (int ox = 0; ox < gw; ++ox) {
          T acc = T(0);
          for (int yy = oy * bh; yy < (oy + 1) * bh; ++yy) {
            const T* row = src + static_cast<int64_t>(yy) * x.w;
            for (int xx = ox * bw; xx < (ox + 1) * bw; ++xx) acc += row[xx];
          }
          dst[static_cast<int64_t>(oy) * gw + ox] = acc * inv;
        }
    }
  return y;
}

template <typename T>
void block_avg_pool_backward(const Tensor<T>& dy, int ih, int iw, Tensor<T>& dx) {
  const int bh = ih / dy.h, bw = iw / dy.w;
  const T inv = T(1) / static_cast<T>(bh * bw);
  for (int b = 0; b < dy.n; ++b)
    for (int c = 0; c < dy.c; ++c) {
      const T* g = dy.plane(b, c);
      T* dst = dx.plane(b, c);
      for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox) {
          T gv = g[static_cast<int64_t>(oy) * dy.w + ox] * inv;
          for (int yy = oy * bh; yy < (oy + 1) * bh; ++yy) {
            T* row = dst + static_cast<int64_t>(yy) * iw;
            for (int xx = ox * bw; xx < (ox + 1) * bw; ++xx) row[xx] += gv;
          }
        }
    }
}

// Spatial max per (b, c); argmax records the flat spatial index (first
// occurrence wins, so ties break deterministically).
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x, std::vector<int64_t>* argmax) {
  Tensor<T> y(x.n, x.c, 1, 1);
  if (argmax) argmax->assign(static_cast<size_t>(x.n) * x.c, 0);
  const int64_t hw = static_cast<int64_t>(x.h) * x.w;
  check(hw > 0, "global_max_pool: empty spatial extent");
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(b, c);
      T best = src[0];
      int64_t bi = 0;
      for (int64_t i = 1; i < hw; ++i)
        if (src[i] > best) {
          best = src[i];
          bi = i;
        }
      y.at(b, c, 0, 0) = best;
      if (argmax) (*argmax)[static_cast<size_t>(b) * x.c + c] = bi;
    }
  return y;
}

// Per-position mean and max across channels (the CBAM spatial descriptors).
template <typename T>
Tensor<T> channel_mean_map(const Tensor<T>& x) {
  Tensor<T> y(x.n, 1, x.h, x.w);
  const int64_t hw = static_cast<int64_t>(x.h) * x.w;
  const T inv = T(1) / static_cast<T>(x.c);
  for (int b = 0; b < x.n; ++b) {
    T* dst = y.plane(b, 0);
    std::fill(dst, dst + hw, T(0));
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(b, c);
      for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
    for (int64_t i = 0; i < hw; ++i) dst[i] *= inv;
  }
  return y;
}

template <typename T>
Tensor<T> channel_max_map(const Tensor<T>& x, std::vector<int>* argmax) {
  Tensor<T> y(x.n, 1, x.h, x.w);
  const int64_t hw = static_cast<int64_t>(x.h) * x.w;
  if (argmax) argmax->assign(static_cast<size_t>(x.n) * hw, 0);
  for (int b = 0; b < x.n; ++b) {
    T* dst = y.plane(b, 0);
    const T* first = x.plane(b, 0);
    std::copy(first, first + hw, dst);
    for (int c = 1; c < x.c; ++c) {
      const T* src = x.plane(b, c);
      for (int64_t i = 0; i < hw; ++i)
        if (src[i] > dst[i]) {
          dst[i] = src[i];
          if (argmax) (*argmax)[static_cast<size_t>(b) * hw + i] = c;
        }
    }
  }
  return y;
}

// Softmax along the last (w) dimension of every row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros_like(x);
  const int64_t rows = x.size() / x.w;
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * x.w;
    T* dst = y.ptr() + r * x.w;
    T mx = src[0];
    for (int i = 1; i < x.w; ++i) mx = std::max(mx, src[i]);
    T sum = T(0);
    for (int i = 0; i < x.w; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    T inv = T(1) / sum;
    for (int i = 0; i < x.w; ++i) dst[i] *= inv;
  }
  return y;
}

template <typename T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t rows = y.size() / y.w;
  for (int64_t r = 0; r < rows; ++r) {
    const T* yv = y.ptr() + r * y.w;
    const T* g = dy.ptr() + r * y.w;
    T* d = dx.ptr() + r * y.w;
    T dot = T(0);
    for (int i = 0; i < y.w; ++i) dot += yv[i] * g[i];
    for (int i = 0; i < y.w; ++i) d[i] += yv[i] * (g[i] - dot);
  }
}

// Batched matmul over n*c independent (h x w) matrices.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  check(a.n == b.n && a.c == b.c, "matmul: batch mismatch ", a.shape_str(), " vs ", b.shape_str());
  const int m = ta ? a.w : a.h, ka = ta ? a.h : a.w;
  const int kb = tb ? b.w : b.h, nn = tb ? b.h : b.w;
  check(ka == kb, "matmul: inner dims ", ka, " vs ", kb);
  Tensor<T> y(a.n, a.c, m, nn);
  const int64_t batches = static_cast<int64_t>(a.n) * a.c;
  const int64_t as = static_cast<int64_t>(a.h) * a.w, bs = static_cast<int64_t>(b.h) * b.w,
                ys = static_cast<int64_t>(m) * nn;
  for (int64_t i = 0; i < batches; ++i)
    gemm(ta, tb, m, nn, ka, T(1), a.ptr() + i * as, a.w, b.ptr() + i * bs, b.w, T(0),
         y.ptr() + i * ys, nn);
  return y;
}

}  // namespace mfds
