#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mfds/kernels.hpp"
#include "mfds/tensor.hpp"

// Reverse-mode autodiff over Tensor<T>. Each op builds a graph node holding
// the result value plus a closure that scatters the node's gradient into its
// parents. When gradients are globally disabled (NoGradGuard) or no input
// requires them, nodes are created without parents, so inference frees
// intermediates as soon as their handles go out of scope.
namespace mfds {

struct GradMode {
  static inline thread_local bool enabled = true;
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled) { GradMode::enabled = false; }
  ~NoGradGuard() { GradMode::enabled = prev; }
};

template <typename T>
class Var;

template <typename T>
struct GraphNode {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(GraphNode<T>&)> backward_fn;

  Tensor<T>& grad_ref() {
    if (!has_grad) {
      grad = Tensor<T>::zeros_like(value);
      has_grad = true;
    }
    return grad;
  }
  void accumulate(const Tensor<T>& g) {
    Tensor<T>& dst = grad_ref();
    for (int64_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<GraphNode<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<GraphNode<T>> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor<T>& grad() { return node_->grad_ref(); }
  bool has_grad() const { return node_ && node_->has_grad; }
  void zero_grad() {
    if (node_ && node_->has_grad) node_->grad.fill(T(0));
  }
  GraphNode<T>* node() const { return node_.get(); }
  std::shared_ptr<GraphNode<T>> handle() const { return node_; }

  // Backpropagates from this node, seeding with a ones gradient (callers
  // invoke it on scalar-shaped losses).
  void backward() {
    check(node_ != nullptr, "backward: undefined Var");
    Tensor<T> seed = Tensor<T>::zeros_like(node_->value);
    seed.fill(T(1));
    backward(seed);
  }

  void backward(const Tensor<T>& seed) {
    std::vector<GraphNode<T>*> order;
    std::unordered_set<GraphNode<T>*> seen;
    topo(node_.get(), seen, order);
    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      GraphNode<T>* n = *it;
      if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
  }

 private:
  static void topo(GraphNode<T>* root, std::unordered_set<GraphNode<T>*>& seen,
                   std::vector<GraphNode<T>*>& order) {
    // Iterative DFS; the graphs here are deep enough to overflow the stack.
    struct Frame {
      GraphNode<T>* node;
      size_t next = 0;
    };
    if (seen.count(root)) return;
    std::vector<Frame> stack{{root}};
    seen.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        GraphNode<T>* p = f.node->parents[f.next++].node();
        if (p && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<GraphNode<T>> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(GraphNode<T>&)> backward_fn) {
  auto node = std::make_shared<GraphNode<T>>();
  node->value = std::move(value);
  bool rg = false;
  if (GradMode::enabled)
    for (const auto& p : parents)
      if (p.requires_grad()) rg = true;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(node);
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise ops. Each dimension of either operand must equal
// the output dimension or be 1.

namespace detail {

inline void broadcast_dims(int a, int b, int& out, const char* name) {
  check(a == b || a == 1 || b == 1, "broadcast: incompatible ", name, " dims ", a, " vs ", b);
  out = std::max(a, b);
}

template <typename T>
struct BcastPlan {
  int n, c, h, w;
  int64_t stride_a[4], stride_b[4];
};

template <typename T>
BcastPlan<T> make_bcast_plan(const Tensor<T>& a, const Tensor<T>& b) {
  BcastPlan<T> p{};
  broadcast_dims(a.n, b.n, p.n, "batch");
  broadcast_dims(a.c, b.c, p.c, "channel");
  broadcast_dims(a.h, b.h, p.h, "height");
  broadcast_dims(a.w, b.w, p.w, "width");
  int64_t sa[4] = {static_cast<int64_t>(a.c) * a.h * a.w, static_cast<int64_t>(a.h) * a.w, a.w, 1};
  int64_t sb[4] = {static_cast<int64_t>(b.c) * b.h * b.w, static_cast<int64_t>(b.h) * b.w, b.w, 1};
  int da[4] = {a.n, a.c, a.h, a.w}, db[4] = {b.n, b.c, b.h, b.w};
  for (int i = 0; i < 4; ++i) {
    p.stride_a[i] = da[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = db[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <typename T, typename F>
Tensor<T> bcast_apply(const Tensor<T>& a, const Tensor<T>& b, F f) {
  BcastPlan<T> p = make_bcast_plan(a, b);
  Tensor<T> out(p.n, p.c, p.h, p.w);
  T* dst = out.ptr();
  for (int in = 0; in < p.n; ++in)
    for (int ic = 0; ic < p.c; ++ic)
      for (int ih = 0; ih < p.h; ++ih) {
        const T* pa = a.ptr() + in * p.stride_a[0] + ic * p.stride_a[1] + ih * p.stride_a[2];
        const T* pb = b.ptr() + in * p.stride_b[0] + ic * p.stride_b[1] + ih * p.stride_b[2];
        int64_t wa = p.stride_a[3], wb = p.stride_b[3];
        for (int iw = 0; iw < p.w; ++iw) *dst++ = f(pa[iw * wa], pb[iw * wb]);
      }
  return out;
}

// Reduces a full-shaped gradient back onto a (possibly broadcast) operand.
template <typename T>
void reduce_into(const Tensor<T>& g, Tensor<T>& dst_grad, const Tensor<T>& operand) {
  if (operand.same_shape(g)) {
    for (int64_t i = 0; i < g.size(); ++i) dst_grad.data[i] += g.data[i];
    return;
  }
  BcastPlan<T> p = make_bcast_plan(operand, g);
  for (int in = 0; in < p.n; ++in)
    for (int ic = 0; ic < p.c; ++ic)
      for (int ih = 0; ih < p.h; ++ih)
        for (int iw = 0; iw < p.w; ++iw) {
          int64_t oi =
              in * p.stride_a[0] + ic * p.stride_a[1] + ih * p.stride_a[2] + iw * p.stride_a[3];
          int64_t gi = g.index(in, ic, ih, iw);
          dst_grad.data[oi] += g.data[gi];
        }
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = detail::bcast_apply(a.value(), b.value(), [](T x, T y) { return x + y; });
  return make_op<T>(std::move(out), {a, b}, [](GraphNode<T>& n) {
    for (int i = 0; i < 2; ++i) {
      Var<T>& p = n.parents[i];
      if (p.requires_grad()) detail::reduce_into(n.grad, p.grad(), p.value());
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = detail::bcast_apply(a.value(), b.value(), [](T x, T y) { return x * y; });
  return make_op<T>(std::move(out), {a, b}, [](GraphNode<T>& n) {
    Var<T>&pa = n.parents[0], &pb = n.parents[1];
    if (pa.requires_grad()) {
      Tensor<T> ga = detail::bcast_apply(n.grad, pb.value(), [](T g, T y) { return g * y; });
      detail::reduce_into(ga, pa.grad(), pa.value());
    }
    if (pb.requires_grad()) {
      Tensor<T> gb = detail::bcast_apply(n.grad, pa.value(), [](T g, T x) { return g * x; });
      detail::reduce_into(gb, pb.grad(), pb.value());
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = detail::bcast_apply(a.value(), b.value(), [](T x, T y) { return x - y; });
  return make_op<T>(std::move(out), {a, b}, [](GraphNode<T>& n) {
    Var<T>&pa = n.parents[0], &pb = n.parents[1];
    if (pa.requires_grad()) detail::reduce_into(n.grad, pa.grad(), pa.value());
    if (pb.requires_grad()) {
      Tensor<T> neg = n.grad;
      for (auto& v : neg.data) v = -v;
      detail::reduce_into(neg, pb.grad(), pb.value());
    }
  });
}

// a*x + b with scalar constants.
template <typename T>
Var<T> affine(const Var<T>& x, T a, T b) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = a * v + b;
  return make_op<T>(std::move(out), {x}, [a](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) dst.data[i] += a * n.grad.data[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {x}, [](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const Tensor<T>& y = n.value;
    for (int64_t i = 0; i < y.size(); ++i)
      if (y.data[i] > T(0)) dst.data[i] += n.grad.data[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  return make_op<T>(std::move(out), {x}, [](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const Tensor<T>& y = n.value;
    for (int64_t i = 0; i < y.size(); ++i) dst.data[i] += n.grad.data[i] * y.data[i] * (T(1) - y.data[i]);
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const ConvSpec& spec) {
  const Tensor<T>* bt = bias && bias->defined() ? &bias->value() : nullptr;
  const bool wants_grad =
      GradMode::enabled && (x.requires_grad() || weight.requires_grad() ||
                            (bias && bias->defined() && bias->requires_grad()));
  // Retain the patch matrices for the weight gradient when training.
  auto cols = wants_grad && weight.requires_grad() ? std::make_shared<std::vector<T>>() : nullptr;
  Tensor<T> out = conv2d_forward(x.value(), weight.value(), bt, spec, cols.get());
  std::vector<Var<T>> parents{x, weight};
  if (bt) parents.push_back(*bias);
  return make_op<T>(std::move(out), std::move(parents), [spec, cols](GraphNode<T>& n) {
    Var<T>&px = n.parents[0], &pw = n.parents[1];
    Tensor<T>* dx = px.requires_grad() ? &px.grad() : nullptr;
    Tensor<T>* dw = pw.requires_grad() ? &pw.grad() : nullptr;
    Tensor<T>* db = nullptr;
    if (n.parents.size() > 2 && n.parents[2].requires_grad()) db = &n.parents[2].grad();
    conv2d_backward(px.value(), pw.value(), n.grad, spec, dx, dw, db,
                    cols && !cols->empty() ? cols.get() : nullptr);
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "concat: no inputs");
  int total_c = 0;
  const Tensor<T>& first = xs[0].value();
  for (const auto& v : xs) {
    check(v.value().n == first.n && v.value().h == first.h && v.value().w == first.w,
          "concat: mismatched shapes ", v.value().shape_str(), " vs ", first.shape_str());
    total_c += v.value().c;
  }
  Tensor<T> out(first.n, total_c, first.h, first.w);
  const int64_t hw = static_cast<int64_t>(first.h) * first.w;
  for (int b = 0; b < first.n; ++b) {
    int co = 0;
    for (const auto& v : xs) {
      const Tensor<T>& t = v.value();
      std::copy(t.plane(b, 0), t.plane(b, 0) + static_cast<int64_t>(t.c) * hw, out.plane(b, co));
      co += t.c;
    }
  }
  return make_op<T>(std::move(out), xs, [hw](GraphNode<T>& n) {
    for (int b = 0; b < n.value.n; ++b) {
      int co = 0;
      for (auto& p : n.parents) {
        int pc = p.value().c;
        if (p.requires_grad()) {
          const T* src = n.grad.plane(b, co);
          T* dst = p.grad().plane(b, 0);
          for (int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
        }
        co += pc;
      }
    }
  });
}

template <typename T>
Var<T> bilinear(const Var<T>& x, int oh, int ow) {
  int ih = x.value().h, iw = x.value().w;
  Tensor<T> out = bilinear_resize(x.value(), oh, ow);
  return make_op<T>(std::move(out), {x}, [ih, iw](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (p.requires_grad()) bilinear_resize_backward(n.grad, ih, iw, p.grad());
  });
}

template <typename T>
Var<T> block_pool(const Var<T>& x, int gh, int gw) {
  int ih = x.value().h, iw = x.value().w;
  Tensor<T> out = block_avg_pool(x.value(), gh, gw);
  return make_op<T>(std::move(out), {x}, [ih, iw](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (p.requires_grad()) block_avg_pool_backward(n.grad, ih, iw, p.grad());
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  return block_pool(x, 1, 1);
}

template <typename T>
Var<T> global_max_pool_var(const Var<T>& x) {
  auto argmax = std::make_shared<std::vector<int64_t>>();
  Tensor<T> out = global_max_pool(x.value(), argmax.get());
  return make_op<T>(std::move(out), {x}, [argmax](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const int64_t hw = static_cast<int64_t>(dst.h) * dst.w;
    for (int b = 0; b < dst.n; ++b)
      for (int c = 0; c < dst.c; ++c)
        dst.plane(b, c)[(*argmax)[static_cast<size_t>(b) * dst.c + c]] += n.grad.at(b, c, 0, 0);
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  Tensor<T> out = channel_mean_map(x.value());
  int c = x.value().c;
  return make_op<T>(std::move(out), {x}, [c](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const int64_t hw = static_cast<int64_t>(dst.h) * dst.w;
    const T inv = T(1) / static_cast<T>(c);
    for (int b = 0; b < dst.n; ++b) {
      const T* g = n.grad.plane(b, 0);
      for (int ch = 0; ch < c; ++ch) {
        T* d = dst.plane(b, ch);
        for (int64_t i = 0; i < hw; ++i) d[i] += g[i] * inv;
      }
    }
  });
}

template <typename T>
Var<T> channel_max(const Var<T>& x) {
  auto argmax = std::make_shared<std::vector<int>>();
  Tensor<T> out = channel_max_map(x.value(), argmax.get());
  return make_op<T>(std::move(out), {x}, [argmax](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const int64_t hw = static_cast<int64_t>(dst.h) * dst.w;
    for (int b = 0; b < dst.n; ++b) {
      const T* g = n.grad.plane(b, 0);
      for (int64_t i = 0; i < hw; ++i)
        dst.plane(b, (*argmax)[static_cast<size_t>(b) * hw + i])[i] += g[i];
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  Tensor<T> out = softmax_rows(x.value());
  return make_op<T>(std::move(out), {x}, [](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (p.requires_grad()) softmax_rows_backward(n.value, n.grad, p.grad());
  });
}

template <typename T>
Var<T> bmatmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  Tensor<T> out = batched_matmul(a.value(), b.value(), ta, tb);
  return make_op<T>(std::move(out), {a, b}, [ta, tb](GraphNode<T>& n) {
    Var<T>&pa = n.parents[0], &pb = n.parents[1];
    if (pa.requires_grad()) {
      Tensor<T> ga = ta ? batched_matmul(pb.value(), n.grad, tb, true)
                        : batched_matmul(n.grad, pb.value(), false, !tb);
      pa.grad();
      for (int64_t i = 0; i < ga.size(); ++i) pa.grad().data[i] += ga.data[i];
    }
    if (pb.requires_grad()) {
      Tensor<T> gb = tb ? batched_matmul(n.grad, pa.value(), true, ta)
                        : batched_matmul(pa.value(), n.grad, !ta, false);
      pb.grad();
      for (int64_t i = 0; i < gb.size(); ++i) pb.grad().data[i] += gb.data[i];
    }
  });
}

template <typename T>
Var<T> view(const Var<T>& x, int n2, int c2, int h2, int w2) {
  Tensor<T> out = x.value().reshaped(n2, c2, h2, w2);
  return make_op<T>(std::move(out), {x}, [](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) dst.data[i] += n.grad.data[i];
  });
}

// Rearranges a (B, C, H, W) map into (B*k*k, C, H/k, W/k) patches; batch
// index b*k*k + py*k + px. Convolving the result with padding cannot leak
// information across patch borders.
template <typename T>
Var<T> patch_split(const Var<T>& x, int k) {
  const Tensor<T>& t = x.value();
  check(t.h % k == 0 && t.w % k == 0, "patch_split: grid ", k, "x", k, " must divide ",
        t.h, "x", t.w);
  const int ph = t.h / k, pw = t.w / k;
  Tensor<T> out(t.n * k * k, t.c, ph, pw);
  for (int b = 0; b < t.n; ++b)
    for (int py = 0; py < k; ++py)
      for (int px = 0; px < k; ++px) {
        int ob = (b * k + py) * k + px;
        for (int c = 0; c < t.c; ++c) {
          const T* src = t.plane(b, c);
          T* dst = out.plane(ob, c);
          for (int y = 0; y < ph; ++y)
            std::copy(src + static_cast<int64_t>(py * ph + y) * t.w + px * pw,
                      src + static_cast<int64_t>(py * ph + y) * t.w + px * pw + pw,
                      dst + static_cast<int64_t>(y) * pw);
        }
      }
  int H = t.h, W = t.w;
  return make_op<T>(std::move(out), {x}, [k, H, W](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const int ph = H / k, pw = W / k;
    for (int b = 0; b < dst.n; ++b)
      for (int py = 0; py < k; ++py)
        for (int px = 0; px < k; ++px) {
          int ob = (b * k + py) * k + px;
          for (int c = 0; c < dst.c; ++c) {
            const T* g = n.grad.plane(ob, c);
            T* d = dst.plane(b, c);
            for (int y = 0; y < ph; ++y)
              for (int x2 = 0; x2 < pw; ++x2)
                d[static_cast<int64_t>(py * ph + y) * W + px * pw + x2] +=
                    g[static_cast<int64_t>(y) * pw + x2];
          }
        }
  });
}

// Inverse of patch_split.
template <typename T>
Var<T> patch_merge(const Var<T>& x, int k) {
  const Tensor<T>& t = x.value();
  check(t.n % (k * k) == 0, "patch_merge: batch ", t.n, " not a multiple of ", k * k);
  const int bn = t.n / (k * k);
  const int H = t.h * k, W = t.w * k;
  Tensor<T> out(bn, t.c, H, W);
  for (int b = 0; b < bn; ++b)
    for (int py = 0; py < k; ++py)
      for (int px = 0; px < k; ++px) {
        int ib = (b * k + py) * k + px;
        for (int c = 0; c < t.c; ++c) {
          const T* src = t.plane(ib, c);
          T* dst = out.plane(b, c);
          for (int y = 0; y < t.h; ++y)
            std::copy(src + static_cast<int64_t>(y) * t.w, src + static_cast<int64_t>(y + 1) * t.w,
                      dst + static_cast<int64_t>(py * t.h + y) * W + px * t.w);
        }
      }
  int ph = t.h, pw = t.w;
  return make_op<T>(std::move(out), {x}, [k, ph, pw](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    Tensor<T>& dst = p.grad();
    const int bn = n.value.n, W = n.value.w;
    for (int b = 0; b < bn; ++b)
      for (int py = 0; py < k; ++py)
        for (int px = 0; px < k; ++px) {
          int ib = (b * k + py) * k + px;
          for (int c = 0; c < dst.c; ++c) {
            const T* g = n.grad.plane(b, c);
            T* d = dst.plane(ib, c);
            for (int y = 0; y < ph; ++y)
              for (int x2 = 0; x2 < pw; ++x2)
                d[static_cast<int64_t>(y) * pw + x2] +=
                    g[static_cast<int64_t>(py * ph + y) * W + px * pw + x2];
          }
        }
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const Tensor<T>& t = x.value();
  T acc = T(0);
  for (const auto& v : t.data) acc += v;
  int64_t count = t.size();
  Tensor<T> out(1, 1, 1, 1);
  out.data[0] = acc / static_cast<T>(count);
  return make_op<T>(std::move(out), {x}, [count](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    T g = n.grad.data[0] / static_cast<T>(count);
    Tensor<T>& dst = p.grad();
    for (auto& v : dst.data) v += g;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  const Tensor<T>& t = x.value();
  T acc = T(0);
  for (const auto& v : t.data) acc += v;
  Tensor<T> out(1, 1, 1, 1);
  out.data[0] = acc;
  return make_op<T>(std::move(out), {x}, [](GraphNode<T>& n) {
    Var<T>& p = n.parents[0];
    if (!p.requires_grad()) return;
    T g = n.grad.data[0];
    Tensor<T>& dst = p.grad();
    for (auto& v : dst.data) v += g;
  });
}

}  // namespace mfds
