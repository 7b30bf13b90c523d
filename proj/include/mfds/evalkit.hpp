#pragma once

#include <cstdint>
#include <string>

#include "mfds/image.hpp"
#include "mfds/tensor.hpp"

// Pixel-level evaluation: confusion accumulation over binary change masks,
// the five ratio metrics, and the four-color prediction/GT overlay. Counts
// pool over every pixel of every image (micro-averaging), which is how the
// single dataset-level percentages are reported.
namespace mfds {

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  double f1 = 0, iou = 0, precision = 0, recall = 0, oa = 0;
};

// Thresholds sigmoid(logit) >= threshold, inclusive at the boundary; logits
// must be a single-channel map. Returns the mask for one batch element.
template <typename T>
ImageU8 binarize(const Tensor<T>& logits, int batch_index, double threshold = 0.5) {
  check(logits.c == 1, "binarize: expected single-channel logits, got ", logits.c);
  check(threshold > 0 && threshold < 1, "binarize: threshold must lie in (0,1), got ", threshold);
  check(batch_index >= 0 && batch_index < logits.n, "binarize: batch index ", batch_index,
        " out of range");
  ImageU8 mask(logits.h, logits.w, 1);
  const T* src = logits.plane(batch_index, 0);
  for (int64_t i = 0; i < static_cast<int64_t>(logits.h) * logits.w; ++i) {
    double p = 1.0 / (1.0 + std::exp(-static_cast<double>(src[i])));
    mask.data[i] = p >= threshold ? 1 : 0;
  }
  return mask;
}

// sigmoid(logit) scaled to 8-bit, rounding to nearest.
template <typename T>
ImageU8 probability_heatmap(const Tensor<T>& logits, int batch_index) {
  check(logits.c == 1, "heatmap: expected single-channel logits, got ", logits.c);
  ImageU8 heat(logits.h, logits.w, 1);
  const T* src = logits.plane(batch_index, 0);
  for (int64_t i = 0; i < static_cast<int64_t>(logits.h) * logits.w; ++i) {
    double p = 1.0 / (1.0 + std::exp(-static_cast<double>(src[i])));
    heat.data[i] = static_cast<uint8_t>(p * 255.0 + 0.5);
  }
  return heat;
}

inline void accumulate(const ImageU8& pred, const ImageU8& gt, ConfusionCounts& counts) {
  check(pred.same_dims(gt), "accumulate: mask dims ", pred.h, "x", pred.w, " vs ", gt.h, "x",
        gt.w);
  check(pred.channels == 1 && gt.channels == 1, "accumulate: masks must be single channel");
  for (size_t i = 0; i < pred.data.size(); ++i) {
    uint8_t p = pred.data[i], g = gt.data[i];
    check(p <= 1 && g <= 1, "accumulate: non-binary mask value ", int(p > 1 ? p : g));
    if (p && g)
      ++counts.tp;
    else if (p && !g)
      ++counts.fp;
    else if (!p && g)
      ++counts.fn;
    else
      ++counts.tn;
  }
}

// Ratios with the zero-denominator convention: a ratio whose denominator is
// empty reports 0 (pooled counts over a dataset never hit the all-empty
// case in practice).
inline MetricsReport compute_metrics(const ConfusionCounts& c) {
  check(c.total() > 0, "compute_metrics: empty counts");
  MetricsReport r;
  auto ratio = [](uint64_t num, uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  r.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.oa = ratio(c.tp + c.tn, c.total());
  return r;
}

// TP white, TN black, FN (unrecognised) pure green, FP (misrecognised) pure
// red.
inline ImageU8 render_overlay(const ImageU8& pred, const ImageU8& gt) {
  check(pred.same_dims(gt), "render_overlay: mask dims ", pred.h, "x", pred.w, " vs ", gt.h, "x",
        gt.w);
  ImageU8 out(pred.h, pred.w, 3);
  for (int y = 0; y < pred.h; ++y)
    for (int x = 0; x < pred.w; ++x) {
      uint8_t p = pred.at(y, x), g = gt.at(y, x);
      uint8_t r = 0, gr = 0, b = 0;
      if (p && g) r = gr = b = 255;       // TP
      else if (!p && g) gr = 255;          // FN
      else if (p && !g) r = 255;           // FP
      out.at(y, x, 0) = r;
      out.at(y, x, 1) = gr;
      out.at(y, x, 2) = b;
    }
  return out;
}

}  // namespace mfds
