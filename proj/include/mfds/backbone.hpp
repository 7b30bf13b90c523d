#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfds/doconv.hpp"
#include "mfds/norm.hpp"

// Modified ResNet-34 twin encoder: the stem max-pool and the classifier-side
// average pool are gone, stage4 is dropped, and every convolution is a
// DO-Conv. Downsampling happens only through stride-2 convolutions, giving
// three scales at strides 2/4/8 with 64/128/256 channels.
namespace mfds {

template <typename T>
struct FeaturePyramid {
  Var<T> level0;  // stride 2
  Var<T> level1;  // stride 4
  Var<T> level2;  // stride 8
};

template <typename T>
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(int c_in, int c_out, int stride, Rng& rng)
      : conv1_(c_in, c_out, 3, 3, stride, 1, false, rng.next_u32()),
        bn1_(c_out),
        conv2_(c_out, c_out, 3, 3, 1, 1, false, rng.next_u32()),
        bn2_(c_out) {
    if (stride != 1 || c_in != c_out) {
      down_conv_.emplace(c_in, c_out, 1, 1, stride, 0, false, rng.next_u32());
      down_bn_.emplace(c_out);
    }
  }

  Var<T> forward(const Var<T>& x) {
    Var<T> y = relu(bn1_.forward(conv1_.forward(x)));
    y = bn2_.forward(conv2_.forward(y));
    Var<T> skip = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
    return relu(add(y, skip));
  }

  void set_training(bool t) {
    bn1_.set_training(t);
    bn2_.set_training(t);
    if (down_bn_) down_bn_->set_training(t);
  }
  void fold() {
    conv1_.fold();
    conv2_.fold();
    if (down_conv_) down_conv_->fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    conv1_.collect_params(p + ".conv1", out);
    bn1_.collect_params(p + ".bn1", out);
    conv2_.collect_params(p + ".conv2", out);
    bn2_.collect_params(p + ".bn2", out);
    if (down_conv_) down_conv_->collect_params(p + ".down", out);
    if (down_bn_) down_bn_->collect_params(p + ".down_bn", out);
  }
  void collect_buffers(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    bn1_.collect_buffers(p + ".bn1", out);
    bn2_.collect_buffers(p + ".bn2", out);
    if (down_bn_) down_bn_->collect_buffers(p + ".down_bn", out);
  }
  void describe(std::vector<std::string>& out) const {
    out.push_back("doconv3x3");
    out.push_back("batchnorm");
    out.push_back("relu");
    out.push_back("doconv3x3");
    out.push_back("batchnorm");
    if (down_conv_) out.push_back("doconv1x1");
    out.push_back("residual_add");
    out.push_back("relu");
  }

 private:
  DOConv2d<T> conv1_, conv2_;
  BatchNorm2d<T> bn1_, bn2_;
  std::optional<DOConv2d<T>> down_conv_;
  std::optional<BatchNorm2d<T>> down_bn_;
};

template <typename T>
class Backbone {
 public:
  // base_channels = 64 reproduces the published layout; smaller values keep
  // gradient-audit instantiations cheap.
  explicit Backbone(Rng& rng, int base_channels = 64)
      : base_(base_channels),
        stem_(3, base_channels, 7, 7, 2, 3, false, rng.next_u32()),
        stem_bn_(base_channels) {
    const int c0 = base_channels, c1 = 2 * base_channels, c2 = 4 * base_channels;
    for (int i = 0; i < 3; ++i) stage1_.emplace_back(c0, c0, 1, rng);
    stage2_.emplace_back(c0, c1, 2, rng);
    for (int i = 0; i < 3; ++i) stage2_.emplace_back(c1, c1, 1, rng);
    stage3_.emplace_back(c1, c2, 2, rng);
    for (int i = 0; i < 5; ++i) stage3_.emplace_back(c2, c2, 1, rng);
  }

  FeaturePyramid<T> extract(const Var<T>& image) {
    const Tensor<T>& t = image.value();
    check(t.c == 3, "backbone: expected 3-channel input, got ", t.c);
    check(t.h % 8 == 0, "backbone: input height ", t.h, " not divisible by 8");
    check(t.w % 8 == 0, "backbone: input width ", t.w, " not divisible by 8");
    Var<T> x = relu(stem_bn_.forward(stem_.forward(image)));
    for (auto& b : stage1_) x = b.forward(x);
    FeaturePyramid<T> pyr;
    pyr.level0 = x;
    for (auto& b : stage2_) x = b.forward(x);
    pyr.level1 = x;
    for (auto& b : stage3_) x = b.forward(x);
    pyr.level2 = x;
    return pyr;
  }

  // Both branches share this backbone's weights.
  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> twin_extract(const Var<T>& image_a,
                                                               const Var<T>& image_b) {
    check(image_a.value().same_shape(image_b.value()), "twin_extract: image shapes differ, ",
          image_a.value().shape_str(), " vs ", image_b.value().shape_str());
    return {extract(image_a), extract(image_b)};
  }

  void set_training(bool t) {
    stem_bn_.set_training(t);
    for (auto& b : stage1_) b.set_training(t);
    for (auto& b : stage2_) b.set_training(t);
    for (auto& b : stage3_) b.set_training(t);
  }
  void fold() {
    stem_.fold();
    for (auto& b : stage1_) b.fold();
    for (auto& b : stage2_) b.fold();
    for (auto& b : stage3_) b.fold();
  }

  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    stem_.collect_params(p + ".stem", out);
    stem_bn_.collect_params(p + ".stem_bn", out);
    collect_stage(p + ".stage1", stage1_, out);
    collect_stage(p + ".stage2", stage2_, out);
    collect_stage(p + ".stage3", stage3_, out);
  }
  void collect_buffers(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    stem_bn_.collect_buffers(p + ".stem_bn", out);
    for (size_t i = 0; i < stage1_.size(); ++i)
      stage1_[i].collect_buffers(p + ".stage1." + std::to_string(i), out);
    for (size_t i = 0; i < stage2_.size(); ++i)
      stage2_[i].collect_buffers(p + ".stage2." + std::to_string(i), out);
    for (size_t i = 0; i < stage3_.size(); ++i)
      stage3_[i].collect_buffers(p + ".stage3." + std::to_string(i), out);
  }

  // Flat layer-kind listing for structural assertions.
  std::vector<std::string> describe() const {
    std::vector<std::string> out{"doconv7x7_s2", "batchnorm", "relu"};
    for (const auto& b : stage1_) b.describe(out);
    for (const auto& b : stage2_) b.describe(out);
    for (const auto& b : stage3_) b.describe(out);
    return out;
  }
  int blocks_in_stage(int stage) const {
    return stage == 1 ? static_cast<int>(stage1_.size())
                      : stage == 2 ? static_cast<int>(stage2_.size())
                                   : static_cast<int>(stage3_.size());
  }
  int base_channels() const { return base_; }

 private:
  static void collect_stage(const std::string& p, std::vector<BasicBlock<T>>& stage,
                            std::vector<std::pair<std::string, Var<T>>>& out) {
    for (size_t i = 0; i < stage.size(); ++i)
      stage[i].collect_params(p + "." + std::to_string(i), out);
  }

  int base_ = 64;
  DOConv2d<T> stem_;
  BatchNorm2d<T> stem_bn_;
  std::vector<BasicBlock<T>> stage1_, stage2_, stage3_;
};

}  // namespace mfds
