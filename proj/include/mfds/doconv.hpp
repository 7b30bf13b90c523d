#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfds/autograd.hpp"
#include "mfds/kernels.hpp"
#include "mfds/tensor.hpp"

// Depthwise over-parameterized convolution. During training the layer runs
// the feature-composition route (depthwise transform of each patch, then a
// pointwise contraction with the conventional operator); at inference the
// two operators fold into a single conventional kernel. The two routes are
// algebraically identical, which the test suite exploits as an oracle.
namespace mfds {

struct ConvGeometry {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int c_in = 1;
  int c_out = 1;

  void validate() const {
    check(kernel_h >= 1, "geometry: kernel_h must be >= 1, got ", kernel_h);
    check(kernel_w >= 1, "geometry: kernel_w must be >= 1, got ", kernel_w);
    check(stride >= 1, "geometry: stride must be >= 1, got ", stride);
    check(padding >= 0, "geometry: padding must be >= 0, got ", padding);
    check(c_in >= 1, "geometry: c_in must be >= 1, got ", c_in);
    check(c_out >= 1, "geometry: c_out must be >= 1, got ", c_out);
  }
  int taps() const { return kernel_h * kernel_w; }
  ConvSpec spec() const { return ConvSpec{stride, padding, 1}; }
};

// D is (taps, d_mul, c_in, 1); W is (c_out, d_mul, c_in, 1); bias c_out.
template <typename T>
struct DOConvParams {
  ConvGeometry geometry;
  int d_mul = 1;
  Tensor<T> D;
  Tensor<T> W;
  std::optional<Tensor<T>> bias;

  void validate() const {
    geometry.validate();
    check(d_mul >= geometry.taps(), "doconv: d_mul ", d_mul, " < kernel taps ", geometry.taps());
    check(D.n == geometry.taps() && D.c == d_mul && D.h == geometry.c_in && D.w == 1,
          "doconv: D shape ", D.shape_str(), " inconsistent with geometry");
    check(W.n == geometry.c_out && W.c == d_mul && W.h == geometry.c_in && W.w == 1,
          "doconv: W shape ", W.shape_str(), " inconsistent with geometry");
    if (bias) check(bias->size() == geometry.c_out, "doconv: bias length mismatch");
  }
};

// Folded weight kept in conventional (c_out, c_in, kh, kw) layout; the
// logical (c_out, tap, c_in) element order of the composition is exposed by
// at_tap().
template <typename T>
struct FoldedConvParams {
  ConvGeometry geometry;
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;

  T at_tap(int o, int tap, int c) const {
    return weight.at(o, c, tap / geometry.kernel_w, tap % geometry.kernel_w);
  }
};

template <typename T>
Tensor<T> conventional_conv(const FoldedConvParams<T>& kernel, const Tensor<T>& input) {
  return conv2d_forward(input, kernel.weight,
                        kernel.bias ? &kernel.bias.value() : nullptr, kernel.geometry.spec());
}

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& D, int d_mul, const ConvGeometry& g,
                         const Tensor<T>& input) {
  check(d_mul >= 1, "depthwise_conv: d_mul must be >= 1, got ", d_mul);
  check(D.c == d_mul, "depthwise_conv: D multiplier dim ", D.c, " != d_mul ", d_mul);
  return depthwise_forward(input, D, g.kernel_h, g.kernel_w, g.spec());
}

// W_folded[o, tap, c] = sum_m D[tap, m, c] * W[o, m, c].
template <typename T>
FoldedConvParams<T> compose_kernel(const DOConvParams<T>& params) {
  params.validate();
  const ConvGeometry& g = params.geometry;
  FoldedConvParams<T> out;
  out.geometry = g;
  out.bias = params.bias;
  out.weight = Tensor<T>(g.c_out, g.c_in, g.kernel_h, g.kernel_w);
  for (int o = 0; o < g.c_out; ++o)
    for (int c = 0; c < g.c_in; ++c)
      for (int tap = 0; tap < g.taps(); ++tap) {
        T acc = T(0);
        for (int m = 0; m < params.d_mul; ++m)
          acc += params.D.at(tap, m, c, 0) * params.W.at(o, m, c, 0);
        out.weight.at(o, c, tap / g.kernel_w, tap % g.kernel_w) = acc;
      }
  return out;
}

namespace detail {

// Pointwise contraction weight in (c_out) x (c_in * d_mul) layout matching
// the depthwise output channel order c*d_mul + m.
template <typename T>
Tensor<T> pointwise_matrix(const Tensor<T>& W, int d_mul, int c_in, int c_out) {
  Tensor<T> m(1, 1, c_out, c_in * d_mul);
  for (int o = 0; o < c_out; ++o)
    for (int c = 0; c < c_in; ++c)
      for (int mm = 0; mm < d_mul; ++mm)
        m.at(0, 0, o, c * d_mul + mm) = W.at(o, mm, c, 0);
  return m;
}

template <typename T>
void scatter_pointwise_grad(const Tensor<T>& dmat, int d_mul, int c_in, int c_out,
                            Tensor<T>& dW) {
  for (int o = 0; o < c_out; ++o)
    for (int c = 0; c < c_in; ++c)
      for (int mm = 0; mm < d_mul; ++mm)
        dW.at(o, mm, c, 0) += dmat.at(0, 0, o, c * d_mul + mm);
}

}  // namespace detail

// Feature-composition route: depthwise transform, then pointwise contraction
// with W. Matches conventional_conv(compose_kernel(params), input) up to
// floating-point reassociation.
template <typename T>
Tensor<T> doconv_forward(const DOConvParams<T>& params, const Tensor<T>& input) {
  params.validate();
  const ConvGeometry& g = params.geometry;
  Tensor<T> feat = depthwise_forward(input, params.D, g.kernel_h, g.kernel_w, g.spec());
  Tensor<T> wmat = detail::pointwise_matrix(params.W, params.d_mul, g.c_in, g.c_out);
  const int k = g.c_in * params.d_mul;
  const int64_t ohw = static_cast<int64_t>(feat.h) * feat.w;
  Tensor<T> y(input.n, g.c_out, feat.h, feat.w);
  for (int b = 0; b < input.n; ++b)
    gemm(false, false, g.c_out, static_cast<int>(ohw), k, T(1), wmat.ptr(), k, feat.plane(b, 0),
         static_cast<int>(ohw), T(0), y.plane(b, 0), static_cast<int>(ohw));
  if (params.bias)
    for (int b = 0; b < input.n; ++b)
      for (int c = 0; c < g.c_out; ++c) {
        T* p = y.plane(b, c);
        T bv = params.bias->data[c];
        for (int64_t i = 0; i < ohw; ++i) p[i] += bv;
      }
  return y;
}

// Identity tap embedding on the first taps() multiplier slices plus a
// fan-in-scaled normal W, so the initial composed kernel equals W.
template <typename T>
DOConvParams<T> init_doconv(const ConvGeometry& g, int d_mul, uint64_t seed) {
  g.validate();
  check(d_mul >= g.taps(), "init_doconv: d_mul ", d_mul, " < kernel taps ", g.taps());
  DOConvParams<T> p;
  p.geometry = g;
  p.d_mul = d_mul;
  p.D = Tensor<T>(g.taps(), d_mul, g.c_in, 1);
  for (int tap = 0; tap < g.taps(); ++tap)
    for (int c = 0; c < g.c_in; ++c) p.D.at(tap, tap, c, 0) = T(1);
  p.W = Tensor<T>(g.c_out, d_mul, g.c_in, 1);
  Rng rng(seed);
  double stddev = std::sqrt(2.0 / (static_cast<double>(g.c_in) * g.taps()));
  fill_normal(p.W, rng, 0.0, stddev);
  return p;
}

// Autograd wrapper around the feature-composition route; gradient reaches
// input, D, W and bias.
template <typename T>
Var<T> doconv_op(const Var<T>& x, const Var<T>& D, const Var<T>& W, const Var<T>* bias,
                 const ConvGeometry& g, int d_mul) {
  Tensor<T> feat = depthwise_forward(x.value(), D.value(), g.kernel_h, g.kernel_w, g.spec());
  Tensor<T> wmat = detail::pointwise_matrix(W.value(), d_mul, g.c_in, g.c_out);
  const int k = g.c_in * d_mul;
  const int64_t ohw = static_cast<int64_t>(feat.h) * feat.w;
  Tensor<T> y(x.value().n, g.c_out, feat.h, feat.w);
  for (int b = 0; b < y.n; ++b)
    gemm(false, false, g.c_out, static_cast<int>(ohw), k, T(1), wmat.ptr(), k, feat.plane(b, 0),
         static_cast<int>(ohw), T(0), y.plane(b, 0), static_cast<int>(ohw));
  const Tensor<T>* bt = bias && bias->defined() ? &bias->value() : nullptr;
  if (bt) {
    check(bt->size() == g.c_out, "doconv: bias length mismatch");
    for (int b = 0; b < y.n; ++b)
      for (int c = 0; c < g.c_out; ++c) {
        T* p = y.plane(b, c);
        T bv = bt->data[c];
        for (int64_t i = 0; i < ohw; ++i) p[i] += bv;
      }
  }
  std::vector<Var<T>> parents{x, D, W};
  if (bt) parents.push_back(*bias);
  // Keep the depthwise features for the backward contraction when training.
  auto kept = GradMode::enabled && (x.requires_grad() || D.requires_grad() || W.requires_grad())
                  ? std::make_shared<Tensor<T>>(std::move(feat))
                  : nullptr;
  return make_op<T>(std::move(y), std::move(parents), [g, d_mul, k, ohw, kept](GraphNode<T>& n) {
    Var<T>&px = n.parents[0], &pD = n.parents[1], &pW = n.parents[2];
    const Tensor<T>& dy = n.grad;
    Tensor<T> recomputed;
    if (!kept)
      recomputed = depthwise_forward(px.value(), pD.value(), g.kernel_h, g.kernel_w, g.spec());
    const Tensor<T>& feat = kept ? *kept : recomputed;
    if (pW.requires_grad()) {
      Tensor<T> dmat(1, 1, g.c_out, k);
      for (int b = 0; b < dy.n; ++b)
        gemm(false, true, g.c_out, k, static_cast<int>(ohw), T(1), dy.plane(b, 0),
             static_cast<int>(ohw), feat.plane(b, 0), static_cast<int>(ohw), T(1), dmat.ptr(), k);
      detail::scatter_pointwise_grad(dmat, d_mul, g.c_in, g.c_out, pW.grad());
    }
    if (px.requires_grad() || pD.requires_grad()) {
      Tensor<T> wmat = detail::pointwise_matrix(pW.value(), d_mul, g.c_in, g.c_out);
      Tensor<T> dfeat(dy.n, k, dy.h, dy.w);
      for (int b = 0; b < dy.n; ++b)
        gemm(true, false, k, static_cast<int>(ohw), g.c_out, T(1), wmat.ptr(), k, dy.plane(b, 0),
             static_cast<int>(ohw), T(0), dfeat.plane(b, 0), static_cast<int>(ohw));
      depthwise_backward(px.value(), pD.value(), dfeat, g.kernel_h, g.kernel_w, g.spec(),
                         px.requires_grad() ? &px.grad() : nullptr,
                         pD.requires_grad() ? &pD.grad() : nullptr);
    }
    if (n.parents.size() > 3 && n.parents[3].requires_grad()) {
      Tensor<T>& db = n.parents[3].grad();
      for (int b = 0; b < dy.n; ++b)
        for (int c = 0; c < g.c_out; ++c) {
          const T* p = dy.plane(b, c);
          T acc = T(0);
          for (int64_t i = 0; i < ohw; ++i) acc += p[i];
          db.data[c] += acc;
        }
    }
  });
}

// Network layer. Every convolution in the model is one of these (1x1 layers
// degenerate to d_mul = 1); fold() switches it to the composed conventional
// kernel for inference.
template <typename T>
class DOConv2d {
 public:
  DOConv2d() = default;
  DOConv2d(int c_in, int c_out, int kh, int kw, int stride, int padding, bool with_bias,
           uint64_t seed, int d_mul = 0) {
    geometry_ = ConvGeometry{kh, kw, stride, padding, c_in, c_out};
    d_mul_ = d_mul > 0 ? d_mul : geometry_.taps();
    DOConvParams<T> p = init_doconv<T>(geometry_, d_mul_, seed);
    D_ = Var<T>(std::move(p.D), true);
    W_ = Var<T>(std::move(p.W), true);
    if (with_bias) bias_ = Var<T>(Tensor<T>(1, c_out, 1, 1), true);
  }

  Var<T> forward(const Var<T>& x) {
    if (folded_) {
      return conv2d(x, folded_weight_, bias_.defined() ? &bias_ : nullptr, geometry_.spec());
    }
    return doconv_op(x, D_, W_, bias_.defined() ? &bias_ : nullptr, geometry_, d_mul_);
  }

  DOConvParams<T> params() const {
    DOConvParams<T> p;
    p.geometry = geometry_;
    p.d_mul = d_mul_;
    p.D = D_.value();
    p.W = W_.value();
    if (bias_.defined()) {
      Tensor<T> b = bias_.value();
      p.bias = b.reshaped(1, 1, 1, geometry_.c_out);
    }
    return p;
  }

  void fold() {
    if (folded_) return;
    FoldedConvParams<T> f = compose_kernel(params());
    folded_weight_ = Var<T>(std::move(f.weight), false);
    folded_ = true;
    D_ = Var<T>();
    W_ = Var<T>();
  }

  bool folded() const { return folded_; }
  const ConvGeometry& geometry() const { return geometry_; }
  int d_mul() const { return d_mul_; }
  Var<T>& depthwise_operator() { return D_; }
  Var<T>& conventional_operator() { return W_; }
  Var<T>& bias() { return bias_; }
  Var<T>& folded_weight() { return folded_weight_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Var<T>>>& out) {
    if (folded_) {
      out.emplace_back(prefix + ".W_folded", folded_weight_);
    } else {
      out.emplace_back(prefix + ".D", D_);
      out.emplace_back(prefix + ".W", W_);
    }
    if (bias_.defined()) out.emplace_back(prefix + ".bias", bias_);
  }

  // Restores a layer into folded form from a checkpoint that stored W_folded.
  void set_folded_weight(Tensor<T> w) {
    folded_weight_ = Var<T>(std::move(w), false);
    folded_ = true;
    D_ = Var<T>();
    W_ = Var<T>();
  }

 private:
  ConvGeometry geometry_;
  int d_mul_ = 1;
  bool folded_ = false;
  Var<T> D_, W_, bias_, folded_weight_;
};

}  // namespace mfds
