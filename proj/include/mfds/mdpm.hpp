#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mfds/backbone.hpp"
#include "mfds/doconv.hpp"
#include "mfds/norm.hpp"

// Multi-scale Detail Preservation Module. Per pyramid level: a Gaussian-then-
// Laplacian high-frequency map of the source image gates an edge-enhanced
// copy of the feature, a learnable gain folds it back residually, CBAM
// recalibrates, and two dense blocks plus parallel dilated convolutions
// refine the result.
namespace mfds {

// Grayscale -> resize -> Gaussian blur -> Laplacian -> per-sample min-max
// normalization to [0,1]. Border handling is clamp-to-edge throughout, so a
// constant image produces an exactly-zero response. Grayscale uses the
// Rec.601 luma weights.
template <typename T>
Tensor<T> highfreq_map(const Tensor<T>& image, int target_h, int target_w, double sigma) {
  check(sigma > 0, "highfreq: sigma must be positive, got ", sigma);
  check(target_h >= 3 && target_w >= 3, "highfreq: target dims ", target_h, "x", target_w,
        " too small for the Laplacian stencil");
  check(image.c == 3, "highfreq: expected RGB input, got ", image.c, " channels");

  Tensor<T> gray(image.n, 1, image.h, image.w);
  for (int b = 0; b < image.n; ++b) {
    const T* r = image.plane(b, 0);
    const T* g = image.plane(b, 1);
    const T* bl = image.plane(b, 2);
    T* dst = gray.plane(b, 0);
    const int64_t hw = static_cast<int64_t>(image.h) * image.w;
    for (int64_t i = 0; i < hw; ++i)
      dst[i] = static_cast<T>(0.299) * r[i] + static_cast<T>(0.587) * g[i] +
               static_cast<T>(0.114) * bl[i];
  }
  Tensor<T> resized = bilinear_resize(gray, target_h, target_w);

  // Separable Gaussian, radius ceil(3*sigma), kernel normalized to sum 1.
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<T> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = static_cast<T>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<T>(v / sum);

  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  Tensor<T> blur_h = Tensor<T>::zeros_like(resized);
  for (int b = 0; b < resized.n; ++b) {
    const T* src = resized.plane(b, 0);
    T* dst = blur_h.plane(b, 0);
    for (int y = 0; y < target_h; ++y)
      for (int x = 0; x < target_w; ++x) {
        T acc = T(0);
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * src[static_cast<int64_t>(y) * target_w + clampi(x + i, target_w)];
        dst[static_cast<int64_t>(y) * target_w + x] = acc;
      }
  }
  Tensor<T> blur = Tensor<T>::zeros_like(resized);
  for (int b = 0; b < resized.n; ++b) {
    const T* src = blur_h.plane(b, 0);
    T* dst = blur.plane(b, 0);
    for (int y = 0; y < target_h; ++y)
      for (int x = 0; x < target_w; ++x) {
        T acc = T(0);
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * src[static_cast<int64_t>(clampi(y + i, target_h)) * target_w + x];
        dst[static_cast<int64_t>(y) * target_w + x] = acc;
      }
  }

  // 3x3 Laplacian, center -4 / cross +1.
  Tensor<T> lap = Tensor<T>::zeros_like(blur);
  for (int b = 0; b < blur.n; ++b) {
    const T* src = blur.plane(b, 0);
    T* dst = lap.plane(b, 0);
    for (int y = 0; y < target_h; ++y)
      for (int x = 0; x < target_w; ++x) {
        T c = src[static_cast<int64_t>(y) * target_w + x];
        T up = src[static_cast<int64_t>(clampi(y - 1, target_h)) * target_w + x];
        T dn = src[static_cast<int64_t>(clampi(y + 1, target_h)) * target_w + x];
        T lf = src[static_cast<int64_t>(y) * target_w + clampi(x - 1, target_w)];
        T rt = src[static_cast<int64_t>(y) * target_w + clampi(x + 1, target_w)];
        dst[static_cast<int64_t>(y) * target_w + x] = up + dn + lf + rt - T(4) * c;
      }
  }

  // Per-sample min-max to [0,1]; a flat map (max == min) stays all zeros.
  for (int b = 0; b < lap.n; ++b) {
    T* p = lap.plane(b, 0);
    const int64_t hw = static_cast<int64_t>(target_h) * target_w;
    T lo = p[0], hi = p[0];
    for (int64_t i = 1; i < hw; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    if (hi > lo) {
      T inv = T(1) / (hi - lo);
      for (int64_t i = 0; i < hw; ++i) p[i] = (p[i] - lo) * inv;
    } else {
      for (int64_t i = 0; i < hw; ++i) p[i] = T(0);
    }
  }
  return lap;
}

// Channelwise broadcast product f_e = f_h (x) f.
template <typename T>
Var<T> edge_enhance(const Var<T>& f, const Var<T>& f_h) {
  check(f.value().h == f_h.value().h && f.value().w == f_h.value().w,
        "edge_enhance: spatial dims ", f.value().shape_str(), " vs ", f_h.value().shape_str());
  return mul(f, f_h);
}

template <typename T>
class CbamBlock {
 public:
  CbamBlock() = default;
  CbamBlock(int channels, int reduction, Rng& rng)
      : mlp1_(channels, std::max(1, channels / reduction), 1, 1, 1, 0, true, rng.next_u32()),
        mlp2_(std::max(1, channels / reduction), channels, 1, 1, 1, 0, true, rng.next_u32()),
        spatial_(2, 1, 7, 7, 1, 3, true, rng.next_u32()) {}

  // Shared two-layer bottleneck over global-average and global-max pooled
  // vectors, summed, sigmoid, applied per channel.
  Var<T> channel_attended(const Var<T>& x) {
    Var<T> avg = mlp2_.forward(relu(mlp1_.forward(global_avg_pool(x))));
    Var<T> mx = mlp2_.forward(relu(mlp1_.forward(global_max_pool_var(x))));
    return mul(x, sigmoid(add(avg, mx)));
  }

  Var<T> forward(const Var<T>& x) {
    Var<T> xc = channel_attended(x);
    Var<T> sa = sigmoid(
        spatial_.forward(concat_channels<T>({channel_mean(xc), channel_max(xc)})));
    return mul(xc, sa);
  }

  DOConv2d<T>& spatial_conv() { return spatial_; }
  void fold() {
    mlp1_.fold();
    mlp2_.fold();
    spatial_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    mlp1_.collect_params(p + ".mlp1", out);
    mlp2_.collect_params(p + ".mlp2", out);
    spatial_.collect_params(p + ".spatial", out);
  }

 private:
  DOConv2d<T> mlp1_, mlp2_, spatial_;
};

// Two convolutions with intra-block dense concatenation (growth C/2), a 1x1
// projection back to C, and a residual add.
template <typename T>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(int channels, Rng& rng)
      : conv1_(channels, channels / 2, 3, 3, 1, 1, true, rng.next_u32()),
        conv2_(channels + channels / 2, channels / 2, 3, 3, 1, 1, true, rng.next_u32()),
        proj_(2 * channels, channels, 1, 1, 1, 0, true, rng.next_u32()) {
    check(channels % 2 == 0, "dense block: channel count ", channels, " must be even");
  }

  Var<T> forward(const Var<T>& x) {
    Var<T> y1 = relu(conv1_.forward(x));
    Var<T> y2 = relu(conv2_.forward(concat_channels<T>({x, y1})));
    return add(proj_.forward(concat_channels<T>({x, y1, y2})), x);
  }

  void zero_weights() {
    conv1_.conventional_operator().mutable_value().fill(T(0));
    conv2_.conventional_operator().mutable_value().fill(T(0));
    proj_.conventional_operator().mutable_value().fill(T(0));
    conv1_.bias().mutable_value().fill(T(0));
    conv2_.bias().mutable_value().fill(T(0));
    proj_.bias().mutable_value().fill(T(0));
  }
  void fold() {
    conv1_.fold();
    conv2_.fold();
    proj_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    conv1_.collect_params(p + ".conv1", out);
    conv2_.collect_params(p + ".conv2", out);
    proj_.collect_params(p + ".proj", out);
  }

 private:
  DOConv2d<T> conv1_, conv2_, proj_;
};

// One pyramid level of MDPM; the module weights are shared between the two
// temporal branches.
template <typename T>
class MdpmLevel {
 public:
  MdpmLevel() = default;
  MdpmLevel(int channels, int cbam_reduction, Rng& rng)
      : channels_(channels),
        fuse_(2 * channels, channels, 3, 3, 1, 1, true, rng.next_u32()),
        mask_(channels, 1, 1, 1, 1, 0, true, rng.next_u32()),
        cbam_(channels, cbam_reduction, rng),
        dense1_(channels, rng),
        dense2_(channels, rng),
        dil1_(channels, channels, 3, 3, 1, 1, 1, true, rng.next_u32()),
        dil3_(channels, channels, 3, 3, 1, 3, 3, true, rng.next_u32()),
        dil5_(channels, channels, 3, 3, 1, 5, 5, true, rng.next_u32()),
        rf_proj_(channels, channels, 1, 1, 1, 0, true, rng.next_u32()) {
    gain_ = Var<T>(Tensor<T>(1, 1, 1, 1), true);  // starts closed
  }

  std::pair<Var<T>, Var<T>> fuse_and_mask(const Var<T>& f, const Var<T>& f_e) {
    check(f.value().same_shape(f_e.value()), "fuse_and_mask: shapes ", f.value().shape_str(),
          " vs ", f_e.value().shape_str());
    Var<T> f_fuse = fuse_.forward(concat_channels<T>({f_e, f}));
    Var<T> a_m = sigmoid(mask_.forward(f_fuse));
    return {f_fuse, a_m};
  }

  Var<T> gated_residual(const Var<T>& f_fuse, const Var<T>& a_m, const Var<T>& f_original) {
    return add(mul(gain_, mul(f_fuse, a_m)), f_original);
  }

  Var<T> cbam(const Var<T>& x) { return cbam_.forward(x); }

  Var<T> dense_refine(const Var<T>& x) { return dense2_.forward(dense1_.forward(x)); }

  Var<T> multiscale_rf(const Var<T>& x_prime) {
    Var<T> branches = add(add(dil1_.forward(x_prime), dil3_.forward(x_prime)),
                          dil5_.forward(x_prime));
    Var<T> x_f = rf_proj_.forward(branches);
    return relu(add(x_f, x_prime));
  }

  Var<T> forward(const Var<T>& feature, const Var<T>& f_h) {
    Var<T> f_e = edge_enhance(feature, f_h);
    auto [f_fuse, a_m] = fuse_and_mask(feature, f_e);
    Var<T> gated = gated_residual(f_fuse, a_m, feature);
    Var<T> recal = cbam(gated);
    Var<T> refined = dense_refine(recal);
    return multiscale_rf(refined);
  }

  Var<T>& gain() { return gain_; }
  DOConv2d<T>& fuse_conv() { return fuse_; }
  DOConv2d<T>& mask_conv() { return mask_; }
  CbamBlock<T>& cbam_block() { return cbam_; }
  DenseBlock<T>& dense_block(int i) { return i == 0 ? dense1_ : dense2_; }
  Conv2d<T>& dilated(int r) { return r == 1 ? dil1_ : (r == 3 ? dil3_ : dil5_); }
  DOConv2d<T>& rf_projection() { return rf_proj_; }
  int channels() const { return channels_; }

  void fold() {
    fuse_.fold();
    mask_.fold();
    cbam_.fold();
    dense1_.fold();
    dense2_.fold();
    rf_proj_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    out.emplace_back(p + ".gain", gain_);
    fuse_.collect_params(p + ".fuse", out);
    mask_.collect_params(p + ".mask", out);
    cbam_.collect_params(p + ".cbam", out);
    dense1_.collect_params(p + ".dense1", out);
    dense2_.collect_params(p + ".dense2", out);
    dil1_.collect_params(p + ".dil1", out);
    dil3_.collect_params(p + ".dil3", out);
    dil5_.collect_params(p + ".dil5", out);
    rf_proj_.collect_params(p + ".rf_proj", out);
  }

 private:
  int channels_ = 0;
  Var<T> gain_;
  DOConv2d<T> fuse_, mask_;
  CbamBlock<T> cbam_;
  DenseBlock<T> dense1_, dense2_;
  Conv2d<T> dil1_, dil3_, dil5_;
  DOConv2d<T> rf_proj_;
};

template <typename T>
class Mdpm {
 public:
  Mdpm() = default;
  Mdpm(const std::vector<int>& level_channels, int cbam_reduction, T gaussian_sigma, Rng& rng)
      : sigma_(gaussian_sigma) {
    check(gaussian_sigma > T(0), "mdpm: gaussian_sigma must be positive");
    for (int c : level_channels) levels_.emplace_back(c, cbam_reduction, rng);
  }

  // source_image is the raw (normalized) RGB frame this pyramid came from.
  FeaturePyramid<T> forward(const FeaturePyramid<T>& pyr, const Tensor<T>& source_image) {
    check(pyr.level0.value().n == source_image.n, "mdpm: pyramid and source batch differ");
    FeaturePyramid<T> out;
    out.level0 = run_level(0, pyr.level0, source_image);
    out.level1 = run_level(1, pyr.level1, source_image);
    out.level2 = run_level(2, pyr.level2, source_image);
    return out;
  }

  MdpmLevel<T>& level(int i) { return levels_[i]; }
  T sigma() const { return sigma_; }

  void fold() {
    for (auto& l : levels_) l.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    for (size_t i = 0; i < levels_.size(); ++i)
      levels_[i].collect_params(p + ".level" + std::to_string(i), out);
  }

 private:
  Var<T> run_level(int idx, const Var<T>& feature, const Tensor<T>& source_image) {
    const Tensor<T>& f = feature.value();
    Var<T> fh = constant(highfreq_map(source_image, f.h, f.w, static_cast<double>(sigma_)));
    return levels_[idx].forward(feature, fh);
  }

  T sigma_ = T(1);
  std::vector<MdpmLevel<T>> levels_;
};

}  // namespace mfds
