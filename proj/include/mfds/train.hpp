#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mfds/checkpoint.hpp"
#include "mfds/datakit.hpp"
#include "mfds/evalkit.hpp"
#include "mfds/supervision.hpp"

namespace mfds {

template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>>> params, T lr, T beta1 = T(0.9),
       T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, p] : params_)
      slots_.push_back({Tensor<T>::zeros_like(p.value()), Tensor<T>::zeros_like(p.value())});
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i].second;
      if (!p.has_grad()) continue;
      Tensor<T>& g = p.grad();
      Tensor<T>& m = slots_[i].m;
      Tensor<T>& v = slots_[i].v;
      Tensor<T>& x = p.mutable_value();
      for (int64_t j = 0; j < x.size(); ++j) {
        m.data[j] = beta1_ * m.data[j] + (T(1) - beta1_) * g.data[j];
        v.data[j] = beta2_ * v.data[j] + (T(1) - beta2_) * g.data[j] * g.data[j];
        x.data[j] -= lr_ * (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + eps_);
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<Slot> slots_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct HarnessOptions {
  double input_mean = 0.5;  // after scaling pixels to [0,1]
  double input_std = 0.5;
  double threshold = 0.5;
  double early_stop_f1 = 0.0;  // stop once validation F1 reaches this (0 = off)
  int max_steps = 0;           // optimizer-step budget (0 = unlimited)
  std::string out_dir;         // checkpoints + training log
  int start_epoch = 0;         // for resumed runs
};

struct TrainReport {
  std::vector<double> epoch_losses;
  std::vector<double> val_f1;
  std::vector<double> val_iou;
  int best_epoch = -1;
  double best_f1 = -1.0;
  int steps_run = 0;
  int epochs_run = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// Pooled-count evaluation at a decision threshold; optionally returns the
// per-sample predicted masks (dataset order).
template <typename T>
MetricsReport evaluate_model(MfdsNet<T>& model, const std::vector<SamplePair>& data,
                             const HarnessOptions& opt, int batch_size,
                             std::vector<ImageU8>* masks_out = nullptr) {
  check(!data.empty(), "evaluate: empty dataset");
  model.set_training(false);
  NoGradGuard ng;
  ConfusionCounts counts;
  for (size_t start = 0; start < data.size(); start += batch_size) {
    size_t end = std::min(data.size(), start + batch_size);
    std::vector<const ImageU8*> as, bs;
    for (size_t i = start; i < end; ++i) {
      as.push_back(&data[i].image_a);
      bs.push_back(&data[i].image_b);
    }
    Tensor<T> ta = images_to_tensor<T>(as, opt.input_mean, opt.input_std);
    Tensor<T> tb = images_to_tensor<T>(bs, opt.input_mean, opt.input_std);
    ForwardOutputs<T> out = model.forward_full(ta, tb);
    for (size_t i = start; i < end; ++i) {
      ImageU8 pred = binarize(out.final_logits.value(), static_cast<int>(i - start),
                              opt.threshold);
      accumulate(pred, data[i].gt, counts);
      if (masks_out) masks_out->push_back(std::move(pred));
    }
  }
  return compute_metrics(counts);
}

// Adam training loop: seeded epoch shuffles, per-epoch validation, best-F1
// checkpointing, and an append-only JSONL log with one record per epoch.
// Throws on the first non-finite loss term, naming it.
template <typename T>
TrainReport train(MfdsNet<T>& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const SupervisionConfig& cfg,
                  const HarnessOptions& opt) {
  cfg.validate();
  check(!train_set.empty(), "train: empty dataset");
  namespace fs = std::filesystem;
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  Adam<T> adam(model.named_parameters(), static_cast<T>(cfg.learning_rate));
  TrainReport report;
  report.best_checkpoint = opt.out_dir.empty() ? "" : opt.out_dir + "/best.ckpt";
  report.last_checkpoint = opt.out_dir.empty() ? "" : opt.out_dir + "/last.ckpt";

  std::ofstream log;
  if (!opt.out_dir.empty())
    log.open(opt.out_dir + "/train_log.jsonl", std::ios::app);

  int steps = 0;
  bool stop = false;
  for (int epoch = opt.start_epoch; epoch < opt.start_epoch + cfg.epochs && !stop; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch) + 1);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    model.set_training(true);
    double epoch_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      if (opt.max_steps > 0 && steps >= opt.max_steps) {
        stop = true;
        break;
      }
      size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const ImageU8*> as, bs, gs;
      for (size_t i = start; i < end; ++i) {
        as.push_back(&train_set[order[i]].image_a);
        bs.push_back(&train_set[order[i]].image_b);
        gs.push_back(&train_set[order[i]].gt);
      }
      Tensor<T> ta = images_to_tensor<T>(as, opt.input_mean, opt.input_std);
      Tensor<T> tb = images_to_tensor<T>(bs, opt.input_mean, opt.input_std);
      Tensor<T> gt = masks_to_tensor<T>(gs);

      ForwardOutputs<T> out = model.forward_full(ta, tb);
      LossBreakdown<T> loss = total_loss(out, gt, cfg);
      for (int i = 0; i < 6; ++i) {
        double term = i < 5 ? static_cast<double>(loss.aux_terms[i].value().data[0])
                            : static_cast<double>(loss.final_term.value().data[0]);
        if (!std::isfinite(term))
          throw std::runtime_error(cat_msg("train: non-finite loss in term ",
                                           LossBreakdown<T>::term_name(i), " at epoch ", epoch,
                                           " step ", steps));
      }
      adam.zero_grad();
      loss.total.backward();
      adam.step();
      epoch_loss += static_cast<double>(loss.total.value().data[0]);
      ++batches;
      ++steps;
    }
    if (batches == 0) break;
    epoch_loss /= batches;
    report.epoch_losses.push_back(epoch_loss);

    const std::vector<SamplePair>& val = val_set.empty() ? train_set : val_set;
    MetricsReport metrics = evaluate_model(model, val, opt, cfg.batch_size);
    report.val_f1.push_back(metrics.f1);
    report.val_iou.push_back(metrics.iou);

    if (metrics.f1 > report.best_f1) {
      report.best_f1 = metrics.f1;
      report.best_epoch = epoch;
      if (!opt.out_dir.empty()) {
        nlohmann::json meta{{"epoch", epoch}, {"best_f1", metrics.f1},
                            {"config", {{"theta", cfg.theta},
                                        {"phi", cfg.phi},
                                        {"learning_rate", cfg.learning_rate},
                                        {"epochs", cfg.epochs},
                                        {"seed", cfg.seed},
                                        {"batch_size", cfg.batch_size}}}};
        save_checkpoint(report.best_checkpoint, model, meta, false);
      }
    }
    if (!opt.out_dir.empty()) {
      nlohmann::json meta{{"epoch", epoch}, {"best_f1", report.best_f1}};
      save_checkpoint(report.last_checkpoint, model, meta, false);
    }

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) {
      nlohmann::json line{{"epoch", epoch},
                          {"train_loss", epoch_loss},
                          {"val_f1", metrics.f1},
                          {"val_iou", metrics.iou},
                          {"wall_seconds", wall}};
      log << line.dump() << "\n";
      log.flush();
    }
    report.epochs_run = epoch - opt.start_epoch + 1;
    if (opt.early_stop_f1 > 0 && metrics.f1 >= opt.early_stop_f1) stop = true;
  }
  report.steps_run = steps;
  return report;
}

}  // namespace mfds
