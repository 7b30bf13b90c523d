#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mfds/image.hpp"
#include "mfds/tensor.hpp"

// Bi-temporal sample generation and ingestion. Synthetic scenes carry exact
// footprint bookkeeping so ground truth can be cross-checked by independent
// rasterization, and they bake in the hard negatives that matter for change
// detection: persistent buildings that change color, cast shadows, and
// per-epoch illumination drift.
namespace mfds {

struct SamplePair {
  ImageU8 image_a;  // epoch 1, RGB
  ImageU8 image_b;  // epoch 2, RGB
  ImageU8 gt;       // binary change mask, 1 channel, values in {0,1}
  std::string id;
};

struct SynthConfig {
  int size = 256;
  int min_shapes = 2;
  int max_shapes = 6;
  double p_appear = 0.35;
  double p_disappear = 0.35;
  double p_persist = 0.30;
  double p_color_change = 0.5;  // persistent building recolors between epochs
  double p_lshape = 0.35;
  double p_shadow = 0.45;
  double texture_noise = 10.0;  // stddev in 8-bit counts
  double illumination = 18.0;   // low-frequency field amplitude, 8-bit counts
  uint64_t seed = 0;

  void validate() const {
    check(size >= 16 && size % 8 == 0, "synth: size ", size, " must be >=16 and divisible by 8");
    check(p_appear >= 0 && p_disappear >= 0 && p_persist >= 0 &&
              p_appear + p_disappear + p_persist <= 1.0 + 1e-12,
          "synth: appear/disappear/persist probabilities must be nonnegative and sum to <= 1");
    check(min_shapes >= 0 && max_shapes >= min_shapes, "synth: bad shape count range");
  }
};

enum class ShapeFate { kAppear, kDisappear, kPersist };

struct SynthShape {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  bool lshape = false;       // when set, the bottom-right quadrant is notched out
  ShapeFate fate = ShapeFate::kPersist;
  bool color_changed = false;
  uint8_t color_a[3] = {0, 0, 0};
  uint8_t color_b[3] = {0, 0, 0};
  bool shadow = false;
  int shadow_dx = 0, shadow_dy = 0;

  bool covers(int x, int y) const {
    if (x < x0 || y < y0 || x >= x0 + w || y >= y0 + h) return false;
    if (lshape && x >= x0 + w / 2 && y >= y0 + h / 2) return false;
    return true;
  }
};

struct SynthSample {
  SamplePair pair;
  ImageU8 color_change_mask;  // persistent-building pixels whose color changed (never in gt)
  ImageU8 shadow_mask;        // shadow-covered background pixels (never in gt)
  std::vector<SynthShape> shapes;
};

namespace detail {

// Smooth per-epoch illumination: bilinear interpolation of a coarse random
// grid, signed around zero.
inline std::vector<float> illumination_field(int size, double amp, Rng& rng) {
  const int g = 4;
  std::vector<float> coarse((g + 1) * (g + 1));
  for (auto& v : coarse) v = static_cast<float>(rng.uniform(-amp, amp));
  std::vector<float> field(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double fy = static_cast<double>(y) / size * g, fx = static_cast<double>(x) / size * g;
      int iy = std::min(static_cast<int>(fy), g - 1), ix = std::min(static_cast<int>(fx), g - 1);
      double wy = fy - iy, wx = fx - ix;
      double v = coarse[iy * (g + 1) + ix] * (1 - wy) * (1 - wx) +
                 coarse[iy * (g + 1) + ix + 1] * (1 - wy) * wx +
                 coarse[(iy + 1) * (g + 1) + ix] * wy * (1 - wx) +
                 coarse[(iy + 1) * (g + 1) + ix + 1] * wy * wx;
      field[static_cast<size_t>(y) * size + x] = static_cast<float>(v);
    }
  return field;
}

inline uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v + 0.5));
}

}  // namespace detail

// One synthetic bi-temporal scene. Ground truth is exactly the symmetric
// difference of footprint presence; color changes of persistent buildings
// and shadows never enter it.
inline SynthSample generate_sample(const SynthConfig& cfg, uint64_t index) {
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x100000001b3ULL * (index + 1));
  const int S = cfg.size;
  SynthSample out;
  out.pair.id = cat_msg("synth-", cfg.seed, "-", index);

  // Non-overlapping footprints via rejection sampling.
  int want = cfg.min_shapes + rng.uniform_int(0, cfg.max_shapes - cfg.min_shapes);
  for (int s = 0; s < want; ++s) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      SynthShape sh;
      sh.w = std::max(8, static_cast<int>(S * rng.uniform(0.13, 0.30)));
      sh.h = std::max(8, static_cast<int>(S * rng.uniform(0.13, 0.30)));
      sh.x0 = rng.uniform_int(2, std::max(2, S - sh.w - 3));
      sh.y0 = rng.uniform_int(2, std::max(2, S - sh.h - 3));
      bool clash = false;
      for (const auto& o : out.shapes)
        if (sh.x0 < o.x0 + o.w + 3 && o.x0 < sh.x0 + sh.w + 3 && sh.y0 < o.y0 + o.h + 3 &&
            o.y0 < sh.y0 + sh.h + 3)
          clash = true;
      if (clash) continue;
      sh.lshape = rng.bernoulli(cfg.p_lshape);
      double u = rng.uniform();
      if (u < cfg.p_appear)
        sh.fate = ShapeFate::kAppear;
      else if (u < cfg.p_appear + cfg.p_disappear)
        sh.fate = ShapeFate::kDisappear;
      else if (u < cfg.p_appear + cfg.p_disappear + cfg.p_persist)
        sh.fate = ShapeFate::kPersist;
      else
        break;  // absent in both epochs: skip the shape entirely
      for (int c = 0; c < 3; ++c)
        sh.color_a[c] = static_cast<uint8_t>(rng.uniform_int(70, 245));
      sh.color_changed =
          sh.fate == ShapeFate::kPersist && rng.bernoulli(cfg.p_color_change);
      for (int c = 0; c < 3; ++c)
        sh.color_b[c] =
            sh.color_changed ? static_cast<uint8_t>(rng.uniform_int(70, 245)) : sh.color_a[c];
      sh.shadow = rng.bernoulli(cfg.p_shadow);
      sh.shadow_dx = rng.bernoulli(0.5) ? sh.w / 3 + 2 : -(sh.w / 3 + 2);
      sh.shadow_dy = sh.h / 3 + 2;
      out.shapes.push_back(sh);
      break;
    }
  }

  // Backgrounds drawn independently per epoch: base tone, low-frequency
  // illumination, pixel noise.
  out.pair.image_a = ImageU8(S, S, 3);
  out.pair.image_b = ImageU8(S, S, 3);
  out.pair.gt = ImageU8(S, S, 1);
  out.color_change_mask = ImageU8(S, S, 1);
  out.shadow_mask = ImageU8(S, S, 1);

  double base_a = rng.uniform(70, 130), base_b = rng.uniform(70, 130);
  std::vector<float> ill_a = detail::illumination_field(S, cfg.illumination, rng);
  std::vector<float> ill_b = detail::illumination_field(S, cfg.illumination, rng);

  auto present = [](const SynthShape& sh, bool epoch_b) {
    return sh.fate == ShapeFate::kPersist ||
           (epoch_b ? sh.fate == ShapeFate::kAppear : sh.fate == ShapeFate::kDisappear);
  };
  auto shadow_covers = [&](const SynthShape& sh, int x, int y) {
    return sh.shadow && sh.covers(x - sh.shadow_dx, y - sh.shadow_dy);
  };

  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const SynthShape* hit_a = nullptr;
      const SynthShape* hit_b = nullptr;
      bool shade_a = false, shade_b = false;
      for (const auto& sh : out.shapes) {
        bool in_a = present(sh, false), in_b = present(sh, true);
        if (sh.covers(x, y)) {
          if (in_a) hit_a = &sh;
          if (in_b) hit_b = &sh;
        } else {
          if (in_a && shadow_covers(sh, x, y)) shade_a = true;
          if (in_b && shadow_covers(sh, x, y)) shade_b = true;
        }
      }
      const int64_t pi = static_cast<int64_t>(y) * S + x;
      for (int c = 0; c < 3; ++c) {
        double va = hit_a ? hit_a->color_a[c] : base_a + ill_a[pi];
        double vb = hit_b ? hit_b->color_b[c] : base_b + ill_b[pi];
        if (!hit_a && shade_a) va *= 0.55;
        if (!hit_b && shade_b) vb *= 0.55;
        va += cfg.texture_noise * rng.normal();
        vb += cfg.texture_noise * rng.normal();
        out.pair.image_a.at(y, x, c) = detail::clamp_u8(va);
        out.pair.image_b.at(y, x, c) = detail::clamp_u8(vb);
      }
      bool cov_a = hit_a != nullptr, cov_b = hit_b != nullptr;
      out.pair.gt.at(y, x) = cov_a != cov_b ? 1 : 0;
      out.color_change_mask.at(y, x) =
          (hit_a && hit_b && hit_a == hit_b && hit_a->color_changed) ? 1 : 0;
      // Shadow-only pixels: shaded in some epoch, building-free in both.
      out.shadow_mask.at(y, x) = ((shade_a || shade_b) && !cov_a && !cov_b) ? 1 : 0;
    }
  return out;
}

inline std::vector<SynthSample> generate(const SynthConfig& cfg, int n) {
  check(n >= 1, "generate: sample count must be >= 1, got ", n);
  cfg.validate();
  std::vector<SynthSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

// Materializes samples in the on-disk layout dir/{A,B,label}/<id>.png with
// labels stored as 0/255.
inline void materialize(const std::string& dir, const std::vector<SynthSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "A");
  fs::create_directories(fs::path(dir) / "B");
  fs::create_directories(fs::path(dir) / "label");
  for (const auto& s : samples) {
    write_png((fs::path(dir) / "A" / (s.pair.id + ".png")).string(), s.pair.image_a);
    write_png((fs::path(dir) / "B" / (s.pair.id + ".png")).string(), s.pair.image_b);
    ImageU8 label(s.pair.gt.h, s.pair.gt.w, 1);
    for (size_t i = 0; i < label.data.size(); ++i)
      label.data[i] = s.pair.gt.data[i] ? 255 : 0;
    write_png((fs::path(dir) / "label" / (s.pair.id + ".png")).string(), label);
  }
}

// Lazily indexed on-disk dataset in the root/{split}/{A,B,label} layout.
// Pairs come back in lexicographic filename order; labels binarize at 128.
class Dataset {
 public:
  static Dataset open(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.dir_ = split.empty() ? fs::path(root) : fs::path(root) / split;
    for (const char* sub : {"A", "B", "label"})
      check(fs::is_directory(ds.dir_ / sub), "load_dataset: missing directory ",
            (ds.dir_ / sub).string());
    std::set<std::string> a, b, l;
    auto scan = [](const fs::path& p, std::set<std::string>& out) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file()) out.insert(e.path().filename().string());
    };
    scan(ds.dir_ / "A", a);
    scan(ds.dir_ / "B", b);
    scan(ds.dir_ / "label", l);
    for (const auto& name : a) {
      check(b.count(name), "load_dataset: ", name, " present in A/ but missing in B/");
      check(l.count(name), "load_dataset: ", name, " present in A/ but missing in label/");
    }
    for (const auto& name : b)
      check(a.count(name), "load_dataset: ", name, " present in B/ but missing in A/");
    for (const auto& name : l)
      check(a.count(name), "load_dataset: ", name, " present in label/ but missing in A/");
    ds.names_.assign(a.begin(), a.end());  // set iteration is lexicographic
    return ds;
  }

  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  SamplePair load(size_t i) const {
    namespace fs = std::filesystem;
    const std::string& name = names_[i];
    SamplePair s;
    s.image_a = read_png((dir_ / "A" / name).string());
    s.image_b = read_png((dir_ / "B" / name).string());
    ImageU8 label = read_png((dir_ / "label" / name).string());
    check(s.image_a.same_dims(s.image_b) && s.image_a.same_dims(label),
          "load_dataset: size mismatch inside triple ", name, " (A ", s.image_a.h, "x",
          s.image_a.w, ", B ", s.image_b.h, "x", s.image_b.w, ", label ", label.h, "x", label.w,
          ")");
    s.gt = ImageU8(label.h, label.w, 1);
    for (int y = 0; y < label.h; ++y)
      for (int x = 0; x < label.w; ++x)
        s.gt.at(y, x) = label.at(y, x, 0) >= 128 ? 1 : 0;
    s.id = name.substr(0, name.find_last_of('.'));
    return s;
  }

  std::vector<SamplePair> load_all() const {
    std::vector<SamplePair> out;
    out.reserve(size());
    for (size_t i = 0; i < size(); ++i) out.push_back(load(i));
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
};

// Row-major tiling with stride tile - overlap; trailing partial tiles are
// dropped. Tile ids record the source id and grid position.
inline std::vector<SamplePair> crop_tiles(const SamplePair& src, int tile, int overlap) {
  check(tile >= 1 && tile <= std::min(src.image_a.h, src.image_a.w), "crop_tiles: tile ", tile,
        " exceeds image ", src.image_a.h, "x", src.image_a.w);
  check(overlap >= 0 && overlap < tile, "crop_tiles: overlap ", overlap, " must be in [0, tile)");
  const int stride = tile - overlap;
  std::vector<SamplePair> out;
  auto crop = [&](const ImageU8& img, int y0, int x0) {
    ImageU8 t(tile, tile, img.channels);
    for (int y = 0; y < tile; ++y)
      for (int x = 0; x < tile; ++x)
        for (int c = 0; c < img.channels; ++c) t.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return t;
  };
  int r = 0;
  for (int y0 = 0; y0 + tile <= src.image_a.h; y0 += stride, ++r) {
    int c = 0;
    for (int x0 = 0; x0 + tile <= src.image_a.w; x0 += stride, ++c) {
      SamplePair t;
      t.image_a = crop(src.image_a, y0, x0);
      t.image_b = crop(src.image_b, y0, x0);
      t.gt = crop(src.gt, y0, x0);
      t.id = cat_msg(src.id, "_r", r, "_c", c);
      out.push_back(std::move(t));
    }
  }
  return out;
}

// Batch conversion to model tensors: pixels scale to [0,1], then standardize
// with the configured mean/std.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageU8*>& images, double mean, double stddev) {
  check(!images.empty(), "images_to_tensor: empty batch");
  const ImageU8& first = *images[0];
  Tensor<T> out(static_cast<int>(images.size()), 3, first.h, first.w);
  for (size_t b = 0; b < images.size(); ++b) {
    const ImageU8& img = *images[b];
    check(img.channels == 3, "images_to_tensor: expected RGB, got ", img.channels, " channels");
    check(img.same_dims(first), "images_to_tensor: mixed sizes in batch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
          out.at(static_cast<int>(b), c, y, x) =
              static_cast<T>((img.at(y, x, c) / 255.0 - mean) / stddev);
  }
  return out;
}

template <typename T>
Tensor<T> masks_to_tensor(const std::vector<const ImageU8*>& masks) {
  check(!masks.empty(), "masks_to_tensor: empty batch");
  const ImageU8& first = *masks[0];
  Tensor<T> out(static_cast<int>(masks.size()), 1, first.h, first.w);
  for (size_t b = 0; b < masks.size(); ++b) {
    const ImageU8& m = *masks[b];
    check(m.channels == 1, "masks_to_tensor: expected single channel");
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        out.at(static_cast<int>(b), 0, y, x) = static_cast<T>(m.at(y, x) ? 1 : 0);
  }
  return out;
}

}  // namespace mfds
