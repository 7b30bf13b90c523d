#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfds {

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

template <typename... Args>
void check(bool cond, const Args&... args) {
  if (!cond) throw std::invalid_argument(cat_msg(args...));
}

// Rank-4 numeric array in (batch, channels, height, width) order, row-major
// with width fastest-varying. All module boundaries exchange this type; other
// array shapes (kernel operators, pooled vectors) reuse it with documented
// dimension meanings.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {
    check(n_ >= 0 && c_ >= 0 && h_ >= 0 && w_ >= 0, "Tensor: negative dimension (", n_, ",", c_,
          ",", h_, ",", w_, ")");
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }

  int64_t size() const { return static_cast<int64_t>(n) * c * h * w; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const { return cat_msg(n, "x", c, "x", h, "x", w); }

  int64_t index(int b, int ch, int y, int x) const {
    return ((static_cast<int64_t>(b) * c + ch) * h + y) * w + x;
  }
  T& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }
  const T& at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // Plane pointer for (b, ch); spatial elements are contiguous behind it.
  T* plane(int b, int ch) { return data.data() + index(b, ch, 0, 0); }
  const T* plane(int b, int ch) const { return data.data() + index(b, ch, 0, 0); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  Tensor<T> reshaped(int n2, int c2, int h2, int w2) const {
    check(static_cast<int64_t>(n2) * c2 * h2 * w2 == size(), "reshape: size mismatch ",
          shape_str(), " -> ", n2, "x", c2, "x", h2, "x", w2);
    Tensor<T> out = *this;
    out.n = n2;
    out.c = c2;
    out.h = h2;
    out.w = w2;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n, c, h, w);
    for (int64_t i = 0; i < size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch ", a.shape_str(), " vs ", b.shape_str());
  T m = T(0);
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Deterministic RNG with pinned uniform/normal transforms so that sampled
// values do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint32_t next_u32() { return gen_(); }

  double uniform() {  // [0,1), 53-bit resolution
    uint64_t a = gen_() >> 5, b = gen_() >> 6;
    return (a * 67108864.0 + b) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    int span = hi - lo + 1;
    int v = lo + static_cast<int>(uniform() * span);
    return v > hi ? hi : v;
  }
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-12) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  for (auto& v : t.data) v = static_cast<T>(mean + stddev * rng.normal());
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = 0.0, double hi = 1.0) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace mfds
