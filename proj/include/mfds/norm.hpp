#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfds/autograd.hpp"
#include "mfds/tensor.hpp"

namespace mfds {

// Per-channel batch normalization with learned affine. Training mode
// normalizes with batch statistics and maintains running estimates; eval
// mode applies the running statistics, making inference purely functional.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5))
      : momentum_(momentum), eps_(eps) {
    Tensor<T> g(1, channels, 1, 1);
    g.fill(T(1));
    gamma_ = Var<T>(std::move(g), true);
    beta_ = Var<T>(Tensor<T>(1, channels, 1, 1), true);
    running_mean_ = Tensor<T>(1, channels, 1, 1);
    running_var_ = Tensor<T>(1, channels, 1, 1);
    running_var_.fill(T(1));
  }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  Var<T> forward(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    const int C = xv.c;
    check(C == gamma_.value().c, "batchnorm: input has ", C, " channels, layer expects ",
          gamma_.value().c);
    const int64_t hw = static_cast<int64_t>(xv.h) * xv.w;
    const int64_t count = static_cast<int64_t>(xv.n) * hw;

    std::vector<T> mean(C), invstd(C);
    if (training_) {
      for (int c = 0; c < C; ++c) {
        T m = T(0);
        for (int b = 0; b < xv.n; ++b) {
          const T* p = xv.plane(b, c);
          for (int64_t i = 0; i < hw; ++i) m += p[i];
        }
        m /= static_cast<T>(count);
        T v = T(0);
        for (int b = 0; b < xv.n; ++b) {
          const T* p = xv.plane(b, c);
          for (int64_t i = 0; i < hw; ++i) {
            T d = p[i] - m;
            v += d * d;
          }
        }
        v /= static_cast<T>(count);
        mean[c] = m;
        invstd[c] = T(1) / std::sqrt(v + eps_);
        T unbiased = count > 1 ? v * static_cast<T>(count) / static_cast<T>(count - 1) : v;
        running_mean_.data[c] = (T(1) - momentum_) * running_mean_.data[c] + momentum_ * m;
        running_var_.data[c] = (T(1) - momentum_) * running_var_.data[c] + momentum_ * unbiased;
      }
    } else {
      for (int c = 0; c < C; ++c) {
        mean[c] = running_mean_.data[c];
        invstd[c] = T(1) / std::sqrt(running_var_.data[c] + eps_);
      }
    }

    auto xhat = std::make_shared<Tensor<T>>(xv.n, C, xv.h, xv.w);
    Tensor<T> y(xv.n, C, xv.h, xv.w);
    for (int b = 0; b < xv.n; ++b)
      for (int c = 0; c < C; ++c) {
        const T* p = xv.plane(b, c);
        T* xh = xhat->plane(b, c);
        T* yp = y.plane(b, c);
        const T g = gamma_.value().data[c], bt = beta_.value().data[c];
        for (int64_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean[c]) * invstd[c];
          yp[i] = g * xh[i] + bt;
        }
      }

    auto saved_invstd = std::make_shared<std::vector<T>>(std::move(invstd));
    bool training = training_;
    return make_op<T>(
        std::move(y), {x, gamma_, beta_},
        [xhat, saved_invstd, training, hw, count](GraphNode<T>& n) {
          Var<T>&px = n.parents[0], &pg = n.parents[1], &pb = n.parents[2];
          const Tensor<T>& dy = n.grad;
          const int C = dy.c;
          std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
          for (int b = 0; b < dy.n; ++b)
            for (int c = 0; c < C; ++c) {
              const T* g = dy.plane(b, c);
              const T* xh = xhat->plane(b, c);
              T s = T(0), sx = T(0);
              for (int64_t i = 0; i < hw; ++i) {
                s += g[i];
                sx += g[i] * xh[i];
              }
              sum_dy[c] += s;
              sum_dy_xhat[c] += sx;
            }
          if (pg.requires_grad())
            for (int c = 0; c < C; ++c) pg.grad().data[c] += sum_dy_xhat[c];
          if (pb.requires_grad())
            for (int c = 0; c < C; ++c) pb.grad().data[c] += sum_dy[c];
          if (!px.requires_grad()) return;
          Tensor<T>& dx = px.grad();
          for (int b = 0; b < dy.n; ++b)
            for (int c = 0; c < C; ++c) {
              const T* g = dy.plane(b, c);
              const T* xh = xhat->plane(b, c);
              T* d = dx.plane(b, c);
              const T gam = pg.value().data[c];
              const T istd = (*saved_invstd)[c];
              if (training) {
                const T inv_n = T(1) / static_cast<T>(count);
                for (int64_t i = 0; i < hw; ++i)
                  d[i] += gam * istd *
                          (g[i] - inv_n * sum_dy[c] - inv_n * xh[i] * sum_dy_xhat[c]);
              } else {
                for (int64_t i = 0; i < hw; ++i) d[i] += gam * istd * g[i];
              }
            }
        });
  }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Var<T>>>& out) {
    out.emplace_back(prefix + ".gamma", gamma_);
    out.emplace_back(prefix + ".beta", beta_);
  }
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back(prefix + ".running_mean", &running_mean_);
    out.emplace_back(prefix + ".running_var", &running_var_);
  }

 private:
  Var<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  T momentum_ = T(0.1), eps_ = T(1e-5);
  bool training_ = true;
};

// Plain trainable convolution, used only where the network spec calls for
// the folded conventional form directly (the dilated branches in MDPM).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int c_in, int c_out, int kh, int kw, int stride, int padding, int dilation,
         bool with_bias, uint64_t seed) {
    spec_ = ConvSpec{stride, padding, dilation};
    Tensor<T> w(c_out, c_in, kh, kw);
    Rng rng(seed);
    fill_normal(w, rng, 0.0, std::sqrt(2.0 / (static_cast<double>(c_in) * kh * kw)));
    weight_ = Var<T>(std::move(w), true);
    if (with_bias) bias_ = Var<T>(Tensor<T>(1, c_out, 1, 1), true);
  }

  Var<T> forward(const Var<T>& x) {
    return conv2d(x, weight_, bias_.defined() ? &bias_ : nullptr, spec_);
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Var<T>>>& out) {
    out.emplace_back(prefix + ".weight", weight_);
    if (bias_.defined()) out.emplace_back(prefix + ".bias", bias_);
  }

 private:
  ConvSpec spec_;
  Var<T> weight_, bias_;
};

}  // namespace mfds
