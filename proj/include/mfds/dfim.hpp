#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mfds/doconv.hpp"
#include "mfds/norm.hpp"

// Differential Feature Integration Module. Stage 1 fuses the two temporal
// shallow features with an attentional (AFF-style) convex combination; stage
// 2 crosses pixel attention on the shallow side with channel attention on
// the upsampled deep side to emphasize change. Callers align the deep
// feature spatially and in channel count before entry.
namespace mfds {

// Pixel-wise attention logits: 1x1 bottleneck with normalization, no pooling
// and no sigmoid (squashing happens at the use sites).
template <typename T>
class LocalAttention {
 public:
  LocalAttention() = default;
  LocalAttention(int channels, int reduction, Rng& rng)
      : c1_(channels, std::max(1, channels / reduction), 1, 1, 1, 0, true, rng.next_u32()),
        bn_(std::max(1, channels / reduction)),
        c2_(std::max(1, channels / reduction), channels, 1, 1, 1, 0, true, rng.next_u32()) {}

  Var<T> forward(const Var<T>& x) { return c2_.forward(relu(bn_.forward(c1_.forward(x)))); }

  void set_training(bool t) { bn_.set_training(t); }
  void zero_weights() {
    c1_.conventional_operator().mutable_value().fill(T(0));
    c1_.bias().mutable_value().fill(T(0));
    c2_.conventional_operator().mutable_value().fill(T(0));
    c2_.bias().mutable_value().fill(T(0));
  }
  DOConv2d<T>& bottleneck() { return c1_; }
  DOConv2d<T>& expand() { return c2_; }
  void fold() {
    c1_.fold();
    c2_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    c1_.collect_params(p + ".c1", out);
    bn_.collect_params(p + ".bn", out);
    c2_.collect_params(p + ".c2", out);
  }
  void collect_buffers(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    bn_.collect_buffers(p + ".bn", out);
  }

 private:
  DOConv2d<T> c1_, c2_;
  BatchNorm2d<T> bn_;
};

// Per-channel attention logits from a global average pool, broadcastable
// over space; again no sigmoid here.
template <typename T>
class ChannelAttentionLogits {
 public:
  ChannelAttentionLogits() = default;
  ChannelAttentionLogits(int channels, int reduction, Rng& rng)
      : c1_(channels, std::max(1, channels / reduction), 1, 1, 1, 0, true, rng.next_u32()),
        c2_(std::max(1, channels / reduction), channels, 1, 1, 1, 0, true, rng.next_u32()) {}

  Var<T> forward(const Var<T>& x) {
    return c2_.forward(relu(c1_.forward(global_avg_pool(x))));
  }

  void zero_weights() {
    c1_.conventional_operator().mutable_value().fill(T(0));
    c1_.bias().mutable_value().fill(T(0));
    c2_.conventional_operator().mutable_value().fill(T(0));
    c2_.bias().mutable_value().fill(T(0));
  }
  void fold() {
    c1_.fold();
    c2_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    c1_.collect_params(p + ".c1", out);
    c2_.collect_params(p + ".c2", out);
  }

 private:
  DOConv2d<T> c1_, c2_;
};

template <typename T>
struct DfimTrace {
  Var<T> fused;     // I_L
  Var<T> gate;      // I_mul
  Var<T> pre_gate;  // relu(norm(I_add))
  Var<T> out;       // I_out
};

template <typename T>
class Dfim {
 public:
  Dfim() = default;
  // literal_sum switches Eq-16 handling to the literal reading (raw logit
  // maps summed) instead of attention-modulated conv features.
  Dfim(int channels, int reduction, Rng& rng, bool literal_sum = false)
      : channels_(channels),
        literal_sum_(literal_sum),
        aff_local_(channels, reduction, rng),
        aff_channel_(channels, reduction, rng),
        s2_local_(channels, reduction, rng),
        s2_channel_(channels, reduction, rng),
        conv_l_(channels, channels, 3, 3, 1, 1, false, rng.next_u32()),
        conv_d_(channels, channels, 3, 3, 1, 1, false, rng.next_u32()),
        out_bn_(channels) {}

  // sigmoid(f_C(I_F) + f_L(I_F)); symmetric in the operand order because it
  // only sees the sum I_F.
  Var<T> fusion_weight(const Var<T>& i_r, const Var<T>& i_p) {
    check(i_r.value().same_shape(i_p.value()), "aff_fuse: shapes ", i_r.value().shape_str(),
          " vs ", i_p.value().shape_str());
    Var<T> i_f = add(i_r, i_p);
    return sigmoid(add(aff_channel_.forward(i_f), aff_local_.forward(i_f)));
  }

  Var<T> aff_fuse(const Var<T>& i_r, const Var<T>& i_p) {
    Var<T> wt = fusion_weight(i_r, i_p);
    return add(mul(wt, i_p), mul(affine(wt, T(-1), T(1)), i_r));
  }

  DfimTrace<T> forward_trace(const Var<T>& i_d, const Var<T>& i_r, const Var<T>& i_p) {
    check(i_d.value().same_shape(i_r.value()), "dfim: deep feature ", i_d.value().shape_str(),
          " not aligned with shallow ", i_r.value().shape_str());
    DfimTrace<T> tr;
    tr.fused = aff_fuse(i_r, i_p);
    tr.gate = mul(sigmoid(s2_local_.forward(tr.fused)), sigmoid(s2_channel_.forward(i_d)));
    Var<T> cl = conv_l_.forward(tr.fused);
    Var<T> cd = conv_d_.forward(i_d);
    Var<T> i_add;
    if (literal_sum_) {
      i_add = add(s2_local_.forward(cl), s2_channel_.forward(cd));
    } else {
      i_add = add(mul(cl, sigmoid(s2_local_.forward(cl))),
                  mul(cd, sigmoid(s2_channel_.forward(cd))));
    }
    tr.pre_gate = relu(out_bn_.forward(i_add));
    tr.out = mul(tr.pre_gate, tr.gate);
    return tr;
  }

  Var<T> forward(const Var<T>& i_d, const Var<T>& i_r, const Var<T>& i_p) {
    return forward_trace(i_d, i_r, i_p).out;
  }

  LocalAttention<T>& aff_local() { return aff_local_; }
  ChannelAttentionLogits<T>& aff_channel() { return aff_channel_; }
  LocalAttention<T>& stage2_local() { return s2_local_; }
  ChannelAttentionLogits<T>& stage2_channel() { return s2_channel_; }

  void set_training(bool t) {
    aff_local_.set_training(t);
    s2_local_.set_training(t);
    out_bn_.set_training(t);
  }
  void fold() {
    aff_local_.fold();
    aff_channel_.fold();
    s2_local_.fold();
    s2_channel_.fold();
    conv_l_.fold();
    conv_d_.fold();
  }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    aff_local_.collect_params(p + ".aff_local", out);
    aff_channel_.collect_params(p + ".aff_channel", out);
    s2_local_.collect_params(p + ".s2_local", out);
    s2_channel_.collect_params(p + ".s2_channel", out);
    conv_l_.collect_params(p + ".conv_l", out);
    conv_d_.collect_params(p + ".conv_d", out);
    out_bn_.collect_params(p + ".out_bn", out);
  }
  void collect_buffers(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    aff_local_.collect_buffers(p + ".aff_local", out);
    s2_local_.collect_buffers(p + ".s2_local", out);
    out_bn_.collect_buffers(p + ".out_bn", out);
  }

 private:
  int channels_ = 0;
  bool literal_sum_ = false;
  LocalAttention<T> aff_local_;
  ChannelAttentionLogits<T> aff_channel_;
  LocalAttention<T> s2_local_;
  ChannelAttentionLogits<T> s2_channel_;
  DOConv2d<T> conv_l_, conv_d_;
  BatchNorm2d<T> out_bn_;
};

// Final prediction head on the stride-2 feature: 3x3 conv, normalization,
// ReLU, 1x1 conv to a single logit channel, bilinear x2 back to image
// resolution. Consumers apply sigmoid.
template <typename T>
class EndLayer {
 public:
  EndLayer() = default;
  EndLayer(int channels, Rng& rng)
      : conv_(channels, channels, 3, 3, 1, 1, false, rng.next_u32()),
        bn_(channels),
        head_(channels, 1, 1, 1, 1, 0, true, rng.next_u32()) {}

  Var<T> forward(const Var<T>& x) {
    Var<T> logits = head_.forward(relu(bn_.forward(conv_.forward(x))));
    return bilinear(logits, 2 * x.value().h, 2 * x.value().w);
  }

  void set_training(bool t) { bn_.set_training(t); }
  void fold() {
    conv_.fold();
    head_.fold();
  }
  DOConv2d<T>& head() { return head_; }
  void collect_params(const std::string& p, std::vector<std::pair<std::string, Var<T>>>& out) {
    conv_.collect_params(p + ".conv", out);
    bn_.collect_params(p + ".bn", out);
    head_.collect_params(p + ".head", out);
  }
  void collect_buffers(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    bn_.collect_buffers(p + ".bn", out);
  }

 private:
  DOConv2d<T> conv_;
  BatchNorm2d<T> bn_;
  DOConv2d<T> head_;
};

}  // namespace mfds
