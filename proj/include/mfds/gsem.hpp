#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mfds/doconv.hpp"
#include "mfds/norm.hpp"

// Global Semantic Enhancement Module for the bottleneck features: a squeeze-
// excitation style channel attention followed by four parallel Semantic
// Context Modules (patch-local convolution gated by a pooled-grid non-local
// map, scaled by a learnable gamma), fused back by a 1x1 convolution.
namespace mfds {

// Embedded-Gaussian non-local block on a small k x k grid:
// y = softmax(theta(w)^T phi(w) / sqrt(d)) . g(w), residually projected back.
// On a singleton grid the softmax over one position is identically 1, which
// would leave theta and phi without any gradient path, so that variant skips
// them entirely and reduces to w + proj(g(w)).
template <typename T>
class NonLocalBlock {
 public:
  NonLocalBlock() = default;
  NonLocalBlock(int channels, Rng& rng, bool singleton_grid = false)
      : channels_(channels), singleton_(singleton_grid) {
    check(channels % 2 == 0, "non_local: channel count ", channels, " must be even");
    if (!singleton_) {
      theta_ = DOConv2d<T>(channels, channels / 2, 1, 1, 1, 0, false, rng.next_u32());
      phi_ = DOConv2d<T>(channels, channels / 2, 1, 1, 1, 0, false, rng.next_u32());
    }
    g_ = DOConv2d<T>(channels, channels / 2, 1, 1, 1, 0, false, rng.next_u32());
    proj_ = DOConv2d<T>(channels / 2, channels, 1, 1, 1, 0, false, rng.next_u32());
  }

  // Softmax attention matrix, (B, 1, k*k, k*k); rows sum to 1.
  Var<T> attention(const Var<T>& w) {
    const Tensor<T>& t = w.value();
    const int c2 = channels_ / 2, k2 = t.h * t.w;
    if (singleton_) {
      check(k2 == 1, "non_local: singleton block given a ", t.h, "x", t.w, " grid");
      Tensor<T> one(t.n, 1, 1, 1);
      one.fill(T(1));
      return constant(std::move(one));
    }
    Var<T> th = view(theta_.forward(w), t.n, 1, c2, k2);
    Var<T> ph = view(phi_.forward(w), t.n, 1, c2, k2);
    Var<T> logits = affine(bmatmul(th, ph, true, false),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(c2))), T(0));
    return softmax_lastdim(logits);
  }

  Var<T> forward(const Var<T>& w) {
    const Tensor<T>& t = w.value();
    check(t.c == channels_, "non_local: input has ", t.c, " channels, block expects ", channels_);
    const int c2 = channels_ / 2, k2 = t.h * t.w;
    Var<T> attn = attention(w);
    Var<T> gv = view(g_.forward(w), t.n, 1, c2, k2);
    Var<T> y = view(bmatmul(gv, attn, false, true), t.n, c2, t.h, t.w);
    return add(w, proj_.forward(y));
  }

  DOConv2d<T>& theta() { return theta_; }
  DOConv2d<T>& phi() { return phi_; }
  DOConv2d<T>& value_proj() { return g_; }
  DOConv2d<T>& out_proj() { return proj_; }
  bool singleton_grid() const { return singleton_; }

  void fold() {
    if (!singleton_) {
      theta_.fold();
      phi_.fold();
    }
    g_.fold();
    proj_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    if (!singleton_) {
      theta_.collect_params(p + ".theta", out);
      phi_.collect_params(p + ".phi", out);
    }
    g_.collect_params(p + ".g", out);
    proj_.collect_params(p + ".proj", out);
  }

 private:
  int channels_ = 0;
  bool singleton_ = false;
  DOConv2d<T> theta_, phi_, g_, proj_;
};

// One Semantic Context Module. Upper branch: shared 3x3 convolution applied
// inside each of the k x k patches (patches are moved into the batch
// dimension, so padding cannot leak across borders). Lower branch: average
// pool to the k x k grid, non-local, bilinear upsample. Output
// X_e = gamma * (W'' (x) X'').
template <typename T>
class Scm {
 public:
  Scm() = default;
  Scm(int channels, int k, Rng& rng)
      : k_(k),
        patch_conv_(channels, channels, 3, 3, 1, 1, true, rng.next_u32()),
        non_local_(channels, rng, k == 1) {
    check(k >= 1, "scm: k must be >= 1, got ", k);
    gamma_ = Var<T>(Tensor<T>(1, 1, 1, 1), true);  // starts closed
  }

  Var<T> forward(const Var<T>& x) {
    const Tensor<T>& t = x.value();
    check(t.h % k_ == 0 && t.w % k_ == 0, "scm: k=", k_, " must divide feature dims ", t.h, "x",
          t.w);
    Var<T> upper = patch_merge(patch_conv_.forward(patch_split(x, k_)), k_);
    Var<T> pooled = block_pool(x, k_, k_);
    Var<T> context = bilinear(non_local_.forward(pooled), t.h, t.w);
    return mul(gamma_, mul(context, upper));
  }

  int k() const { return k_; }
  Var<T>& gamma() { return gamma_; }
  NonLocalBlock<T>& non_local() { return non_local_; }
  DOConv2d<T>& patch_conv() { return patch_conv_; }

  void fold() {
    patch_conv_.fold();
    non_local_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    out.emplace_back(p + ".gamma", gamma_);
    patch_conv_.collect_params(p + ".patch_conv", out);
    non_local_.collect_params(p + ".non_local", out);
  }

 private:
  int k_ = 1;
  DOConv2d<T> patch_conv_;
  NonLocalBlock<T> non_local_;
  Var<T> gamma_;
};

template <typename T>
class Gsem {
 public:
  Gsem() = default;
  Gsem(int channels, int reduction, const std::vector<int>& grid_sizes, Rng& rng)
      : channels_(channels),
        ca1_(channels, channels / reduction, 1, 1, 1, 0, true, rng.next_u32()),
        ca2_(channels / reduction, channels, 1, 1, 1, 0, true, rng.next_u32()),
        fusion_(channels * static_cast<int>(grid_sizes.size()), channels, 1, 1, 1, 0, true,
                rng.next_u32()) {
    check(reduction >= 1 && channels % reduction == 0, "gsem: channels ", channels,
          " not divisible by reduction ", reduction);
    for (int k : grid_sizes) scms_.emplace_back(channels, k, rng);
  }

  // Spatial mean per channel (the squeeze step).
  Var<T> squeeze(const Var<T>& x) { return global_avg_pool(x); }

  Var<T> channel_attention(const Var<T>& x) {
    Var<T> z = squeeze(x);
    Var<T> z_norm = sigmoid(ca2_.forward(relu(ca1_.forward(z))));
    return mul(x, z_norm);
  }

  Var<T> forward(const Var<T>& x) {
    const Tensor<T>& t = x.value();
    check(t.c == channels_, "gsem: input has ", t.c, " channels, module expects ", channels_);
    int kmax = 1;
    for (auto& s : scms_) kmax = std::max(kmax, s.k());
    check(t.h % kmax == 0 && t.w % kmax == 0, "gsem: feature dims ", t.h, "x", t.w,
          " not divisible by largest grid ", kmax);
    Var<T> xp = channel_attention(x);
    std::vector<Var<T>> branches;
    branches.reserve(scms_.size());
    for (auto& s : scms_) branches.push_back(s.forward(xp));
    return fusion_.forward(concat_channels<T>(branches));
  }

  Scm<T>& scm(size_t i) { return scms_[i]; }
  size_t scm_count() const { return scms_.size(); }
  DOConv2d<T>& ca_conv(int i) { return i == 0 ? ca1_ : ca2_; }
  DOConv2d<T>& fusion_conv() { return fusion_; }

  void fold() {
    ca1_.fold();
    ca2_.fold();
    fusion_.fold();
    for (auto& s : scms_) s.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    ca1_.collect_params(p + ".ca1", out);
    ca2_.collect_params(p + ".ca2", out);
    for (size_t i = 0; i < scms_.size(); ++i)
      scms_[i].collect_params(p + ".scm_k" + std::to_string(scms_[i].k()), out);
    fusion_.collect_params(p + ".fusion", out);
  }

 private:
  int channels_ = 0;
  DOConv2d<T> ca1_, ca2_, fusion_;
  std::vector<Scm<T>> scms_;
};

}  // namespace mfds
