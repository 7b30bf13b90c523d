#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfds/backbone.hpp"
#include "mfds/dfim.hpp"
#include "mfds/gsem.hpp"
#include "mfds/mdpm.hpp"

// Full network assembly and the deep-supervision loss. The forward pass
// follows the twin-encoder flow: shared backbone, MDPM per branch, GSEM per
// branch at the bottleneck, then two DFIM fusion stages walking back up the
// pyramid, with five auxiliary logit heads recorded along the way.
namespace mfds {

struct SupervisionConfig {
  double theta = 0.2;        // weight of the two bottleneck-branch losses
  double phi = 0.5;          // weight of the three decoder-stage losses
  double learning_rate = 0.001;
  int epochs = 200;
  uint64_t seed = 0;
  int batch_size = 4;

  void validate() const {
    check(theta >= 0, "supervision: theta must be >= 0, got ", theta);
    check(phi >= 0, "supervision: phi must be >= 0, got ", phi);
    check(learning_rate > 0, "supervision: learning_rate must be positive, got ", learning_rate);
    check(epochs >= 1, "supervision: epochs must be >= 1, got ", epochs);
    check(batch_size >= 1, "supervision: batch_size must be >= 1, got ", batch_size);
  }
};

// Final logits plus the five auxiliary logit maps in pipeline order
// (bottleneck branch 1, bottleneck branch 2, summed bottleneck, first DFIM
// stage, second DFIM stage), each at its native resolution.
template <typename T>
struct ForwardOutputs {
  Var<T> final_logits;
  std::array<Var<T>, 5> aux_logits;
};

// Mean binary cross entropy over all pixels of all batch elements, computed
// in the fused log-sigmoid form so saturated logits stay finite.
template <typename T>
Var<T> bce_loss(const Var<T>& logits, const Tensor<T>& gt) {
  const Tensor<T>& z = logits.value();
  check(z.same_shape(gt), "bce: logits ", z.shape_str(), " vs gt ", gt.shape_str());
  for (int64_t i = 0; i < gt.size(); ++i)
    check(gt.data[i] == T(0) || gt.data[i] == T(1), "bce: ground truth must be binary, found ",
          gt.data[i]);
  const int64_t count = z.size();
  T acc = T(0);
  for (int64_t i = 0; i < count; ++i) {
    T zi = z.data[i], p = gt.data[i];
    acc += std::max(zi, T(0)) - zi * p + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor<T> out(1, 1, 1, 1);
  out.data[0] = acc / static_cast<T>(count);
  Tensor<T> target = gt;
  return make_op<T>(std::move(out), {logits}, [target, count](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    const T g = n.grad.data[0] / static_cast<T>(count);
    const Tensor<T>& z = p.value();
    Tensor<T>& dst = p.grad();
    for (int64_t i = 0; i < count; ++i) {
      T s = T(1) / (T(1) + std::exp(-z.data[i]));
      dst.data[i] += g * (s - target.data[i]);
    }
  });
}

struct ModelConfig {
  int base_channels = 64;
  int gsem_reduction = 16;
  int dfim_reduction = 4;
  int cbam_reduction = 16;
  double gaussian_sigma = 1.0;
  std::vector<int> scm_grids = {1, 2, 4, 8};
  bool dfim_literal_sum = false;
};

template <typename T>
class MfdsNet {
 public:
  MfdsNet(uint64_t seed, const ModelConfig& cfg = ModelConfig()) : cfg_(cfg) {
    Rng rng(seed);
    const int c0 = cfg.base_channels, c1 = 2 * c0, c2 = 4 * c0;
    backbone_ = std::make_unique<Backbone<T>>(rng, c0);
    mdpm_ = std::make_unique<Mdpm<T>>(std::vector<int>{c0, c1, c2}, cfg.cbam_reduction,
                                      static_cast<T>(cfg.gaussian_sigma), rng);
    gsem_ = std::make_unique<Gsem<T>>(c2, cfg.gsem_reduction, cfg.scm_grids, rng);
    head1_ = DOConv2d<T>(c2, 1, 1, 1, 1, 0, true, rng.next_u32());
    head2_ = DOConv2d<T>(c2, 1, 1, 1, 1, 0, true, rng.next_u32());
    head3_ = DOConv2d<T>(c2, 1, 1, 1, 1, 0, true, rng.next_u32());
    proj1_ = DOConv2d<T>(c2, c1, 1, 1, 1, 0, true, rng.next_u32());
    dfim1_ = std::make_unique<Dfim<T>>(c1, cfg.dfim_reduction, rng, cfg.dfim_literal_sum);
    head4_ = DOConv2d<T>(c1, 1, 1, 1, 1, 0, true, rng.next_u32());
    proj2_ = DOConv2d<T>(c1, c0, 1, 1, 1, 0, true, rng.next_u32());
    dfim2_ = std::make_unique<Dfim<T>>(c0, cfg.dfim_reduction, rng, cfg.dfim_literal_sum);
    head5_ = DOConv2d<T>(c0, 1, 1, 1, 1, 0, true, rng.next_u32());
    endlayer_ = std::make_unique<EndLayer<T>>(c0, rng);
  }

  ForwardOutputs<T> forward_full(const Tensor<T>& image_a, const Tensor<T>& image_b) {
    check(image_a.c == 3 && image_b.c == 3, "forward: inputs must be 3-channel");
    check(image_a.same_shape(image_b), "forward: image shapes differ, ", image_a.shape_str(),
          " vs ", image_b.shape_str());
    int kmax = 1;
    for (int k : cfg_.scm_grids) kmax = std::max(kmax, k);
    check(image_a.h % 8 == 0 && image_a.w % 8 == 0, "forward: dims ", image_a.h, "x", image_a.w,
          " not divisible by 8");
    check((image_a.h / 8) % kmax == 0 && (image_a.w / 8) % kmax == 0,
          "forward: bottleneck dims ", image_a.h / 8, "x", image_a.w / 8,
          " not divisible by largest SCM grid ", kmax);

    Var<T> va = constant(image_a), vb = constant(image_b);
    auto [pyr_a, pyr_b] = backbone_->twin_extract(va, vb);
    FeaturePyramid<T> m1 = mdpm_->forward(pyr_a, image_a);
    FeaturePyramid<T> m2 = mdpm_->forward(pyr_b, image_b);

    Var<T> out1 = gsem_->forward(m1.level2);
    Var<T> out2 = gsem_->forward(m2.level2);
    ForwardOutputs<T> out;
    out.aux_logits[0] = head1_.forward(out1);
    out.aux_logits[1] = head2_.forward(out2);

    Var<T> bottleneck = add(out1, out2);
    out.aux_logits[2] = head3_.forward(bottleneck);

    const Tensor<T>& l1 = m1.level1.value();
    Var<T> up1 = proj1_.forward(bilinear(bottleneck, l1.h, l1.w));
    Var<T> stage4 = dfim1_->forward(up1, m1.level1, m2.level1);
    out.aux_logits[3] = head4_.forward(stage4);

    const Tensor<T>& l0 = m1.level0.value();
    Var<T> up2 = proj2_.forward(bilinear(stage4, l0.h, l0.w));
    Var<T> stage5 = dfim2_->forward(up2, m1.level0, m2.level0);
    out.aux_logits[4] = head5_.forward(stage5);

    out.final_logits = endlayer_->forward(stage5);
    return out;
  }

  void set_training(bool t) {
    backbone_->set_training(t);
    dfim1_->set_training(t);
    dfim2_->set_training(t);
    endlayer_->set_training(t);
  }

  // Replaces every DO-Conv by its composed conventional kernel. Idempotent.
  void fold() {
    backbone_->fold();
    mdpm_->fold();
    gsem_->fold();
    dfim1_->fold();
    dfim2_->fold();
    endlayer_->fold();
    for (DOConv2d<T>* h : heads()) h->fold();
    proj1_.fold();
    proj2_.fold();
  }

  std::vector<std::pair<std::string, Var<T>>> named_parameters() {
    std::vector<std::pair<std::string, Var<T>>> out;
    backbone_->collect_params("backbone", out);
    mdpm_->collect_params("mdpm", out);
    gsem_->collect_params("gsem", out);
    head1_.collect_params("head1", out);
    head2_.collect_params("head2", out);
    head3_.collect_params("head3", out);
    proj1_.collect_params("proj1", out);
    dfim1_->collect_params("dfim1", out);
    head4_.collect_params("head4", out);
    proj2_.collect_params("proj2", out);
    dfim2_->collect_params("dfim2", out);
    head5_.collect_params("head5", out);
    endlayer_->collect_params("endlayer", out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    backbone_->collect_buffers("backbone", out);
    dfim1_->collect_buffers("dfim1", out);
    dfim2_->collect_buffers("dfim2", out);
    endlayer_->collect_buffers("endlayer", out);
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  Backbone<T>& backbone() { return *backbone_; }
  Mdpm<T>& mdpm() { return *mdpm_; }
  Gsem<T>& gsem() { return *gsem_; }
  Dfim<T>& dfim(int i) { return i == 0 ? *dfim1_ : *dfim2_; }
  EndLayer<T>& endlayer() { return *endlayer_; }
  DOConv2d<T>& aux_head(int i) {
    DOConv2d<T>* hs[5] = {&head1_, &head2_, &head3_, &head4_, &head5_};
    return *hs[i];
  }

 private:
  std::array<DOConv2d<T>*, 5> heads() {
    return {&head1_, &head2_, &head3_, &head4_, &head5_};
  }

  ModelConfig cfg_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<Mdpm<T>> mdpm_;
  std::unique_ptr<Gsem<T>> gsem_;
  std::unique_ptr<Dfim<T>> dfim1_, dfim2_;
  std::unique_ptr<EndLayer<T>> endlayer_;
  DOConv2d<T> head1_, head2_, head3_, head4_, head5_, proj1_, proj2_;
};

template <typename T>
struct LossBreakdown {
  Var<T> total;
  std::array<Var<T>, 5> aux_terms;
  Var<T> final_term;

  // Pipeline-order names for diagnostics.
  static const char* term_name(int i) {
    static const char* names[6] = {"aux1_bottleneck_a", "aux2_bottleneck_b", "aux3_sum",
                                   "aux4_dfim1",        "aux5_dfim2",        "final"};
    return names[i];
  }
};

// L = theta*(L1+L2) + phi*(L3+L4+L5) + L_final. Auxiliary logits are
// bilinearly upsampled to ground-truth resolution before the loss, rather
// than downsampling the mask.
template <typename T>
LossBreakdown<T> total_loss(const ForwardOutputs<T>& outputs, const Tensor<T>& gt,
                            const SupervisionConfig& cfg) {
  for (int i = 0; i < 5; ++i)
    check(outputs.aux_logits[i].defined(), "total_loss: auxiliary map ", i + 1, " missing");
  check(outputs.final_logits.defined(), "total_loss: final logits missing");
  LossBreakdown<T> lb;
  for (int i = 0; i < 5; ++i)
    lb.aux_terms[i] = bce_loss(bilinear(outputs.aux_logits[i], gt.h, gt.w), gt);
  lb.final_term = bce_loss(outputs.final_logits, gt);
  Var<T> branch = affine(add(lb.aux_terms[0], lb.aux_terms[1]), static_cast<T>(cfg.theta), T(0));
  Var<T> decoder = affine(add(add(lb.aux_terms[2], lb.aux_terms[3]), lb.aux_terms[4]),
                          static_cast<T>(cfg.phi), T(0));
  lb.total = add(add(branch, decoder), lb.final_term);
  return lb;
}

}  // namespace mfds
