#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mfds/blas.hpp"
#include "mfds/checkpoint.hpp"
#include "mfds/config.hpp"
#include "mfds/evalkit.hpp"
#include "mfds/train.hpp"

// Command-line entry point: dataset generation, training, evaluation,
// kernel folding, prediction, and config inspection. Exit codes: 0 success,
// 1 usage/config error, 2 runtime failure.
namespace {

namespace fs = std::filesystem;
using mfds::ImageU8;
using mfds::MfdsNet;
using mfds::RunConfig;
using mfds::Tensor;

int cmd_generate(const RunConfig& cfg, const std::string& out_dir, int count) {
  auto samples = mfds::generate(cfg.synth, count);
  mfds::materialize(out_dir, samples);
  int64_t change = 0, total = 0;
  for (const auto& s : samples) {
    for (auto v : s.pair.gt.data) change += v;
    total += static_cast<int64_t>(s.pair.gt.data.size());
  }
  std::printf("wrote %d pairs to %s (size %dx%d, change-pixel fraction %.6f)\n", count,
              out_dir.c_str(), cfg.synth.size, cfg.synth.size,
              static_cast<double>(change) / static_cast<double>(total));
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& resume) {
  mfds::check(!cfg.data_root.empty(), "train: --data is required");
  std::vector<mfds::SamplePair> train_set =
      mfds::Dataset::open(cfg.data_root, "train").load_all();
  std::vector<mfds::SamplePair> val_set;
  if (fs::is_directory(fs::path(cfg.data_root) / "val"))
    val_set = mfds::Dataset::open(cfg.data_root, "val").load_all();

  mfds::HarnessOptions opt = cfg.harness();
  std::unique_ptr<MfdsNet<float>> model;
  if (!resume.empty()) {
    mfds::CheckpointData meta;
    model = std::make_unique<MfdsNet<float>>(mfds::load_model<float>(resume, &meta));
    opt.start_epoch = meta.meta.value("epoch", -1) + 1;
    std::printf("resuming from %s at epoch %d\n", resume.c_str(), opt.start_epoch);
  } else {
    model = std::make_unique<MfdsNet<float>>(cfg.train.seed, cfg.model);
  }
  mfds::TrainReport rep = mfds::train(*model, train_set, val_set, cfg.train, opt);
  std::printf("trained %d epochs (%d steps); best val F1 %.3f%% at epoch %d\n", rep.epochs_run,
              rep.steps_run, 100.0 * rep.best_f1, rep.best_epoch);
  std::printf("best checkpoint: %s\n", rep.best_checkpoint.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
             const std::string& overlay_dir, const std::string& metrics_out) {
  mfds::check(!cfg.data_root.empty(), "eval: --data is required");
  mfds::check(fs::exists(checkpoint), "eval: checkpoint ", checkpoint, " not found");
  std::vector<mfds::SamplePair> data = mfds::Dataset::open(cfg.data_root, split).load_all();
  MfdsNet<float> model = mfds::load_model<float>(checkpoint);
  std::vector<ImageU8> masks;
  mfds::MetricsReport r =
      mfds::evaluate_model(model, data, cfg.harness(), cfg.train.batch_size, &masks);

  std::printf("%-10s %8.3f\n", "F1", 100.0 * r.f1);
  std::printf("%-10s %8.3f\n", "IoU", 100.0 * r.iou);
  std::printf("%-10s %8.3f\n", "Precision", 100.0 * r.precision);
  std::printf("%-10s %8.3f\n", "Recall", 100.0 * r.recall);
  std::printf("%-10s %8.3f\n", "OA", 100.0 * r.oa);

  if (!metrics_out.empty()) {
    if (fs::path(metrics_out).has_parent_path())
      fs::create_directories(fs::path(metrics_out).parent_path());
    std::ofstream os(metrics_out, std::ios::app);
    mfds::check(os.good(), "eval: cannot write ", metrics_out);
    nlohmann::json line{{"f1", r.f1},
                        {"iou", r.iou},
                        {"precision", r.precision},
                        {"recall", r.recall},
                        {"oa", r.oa},
                        {"checkpoint", checkpoint},
                        {"samples", data.size()}};
    os << line.dump() << "\n";
  }
  if (!overlay_dir.empty()) {
    fs::create_directories(overlay_dir);
    for (size_t i = 0; i < data.size(); ++i)
      mfds::write_png((fs::path(overlay_dir) / (data[i].id + ".png")).string(),
                      mfds::render_overlay(masks[i], data[i].gt));
    std::printf("wrote %zu overlays to %s\n", data.size(), overlay_dir.c_str());
  }
  return 0;
}

int cmd_fold(const RunConfig& cfg, const std::string& in_path, const std::string& out_path,
             int probes, int probe_size) {
  mfds::CheckpointData meta;
  MfdsNet<float> model = mfds::load_model<float>(in_path, &meta);
  model.set_training(false);

  int kmax = 1;
  for (int k : model.config().scm_grids) kmax = std::max(kmax, k);
  mfds::check(probe_size % (8 * kmax) == 0, "fold: probe size ", probe_size,
              " must be divisible by ", 8 * kmax);

  mfds::Rng rng(cfg.train.seed + 17);
  std::vector<std::pair<Tensor<float>, Tensor<float>>> inputs;
  std::vector<Tensor<float>> before;
  mfds::NoGradGuard ng;
  for (int p = 0; p < probes; ++p) {
    Tensor<float> a(1, 3, probe_size, probe_size), b(1, 3, probe_size, probe_size);
    mfds::fill_normal(a, rng);
    mfds::fill_normal(b, rng);
    before.push_back(model.forward_full(a, b).final_logits.value());
    inputs.emplace_back(std::move(a), std::move(b));
  }
  model.fold();
  float max_dev = 0.f;
  for (int p = 0; p < probes; ++p) {
    Tensor<float> after =
        model.forward_full(inputs[p].first, inputs[p].second).final_logits.value();
    max_dev = std::max(max_dev, mfds::max_abs_diff(after, before[p]));
  }
  std::printf("fold verification: max |pre - post| = %.3g over %d probes\n",
              static_cast<double>(max_dev), probes);
  if (max_dev > 1e-4f) {
    std::fprintf(stderr, "fold verification failed: deviation %.3g exceeds 1e-4\n",
                 static_cast<double>(max_dev));
    return 2;
  }
  nlohmann::json out_meta = meta.meta;
  out_meta.erase("model");
  out_meta.erase("format");
  out_meta.erase("folded");
  mfds::save_checkpoint(out_path, model, out_meta, true);
  std::printf("wrote folded checkpoint: %s\n", out_path.c_str());
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& path_a,
                const std::string& path_b, const std::string& out_prefix) {
  ImageU8 a = mfds::read_png(path_a);
  ImageU8 b = mfds::read_png(path_b);
  mfds::check(a.same_dims(b), "predict: image sizes differ (", a.h, "x", a.w, " vs ", b.h, "x",
              b.w, ")");
  MfdsNet<float> model = mfds::load_model<float>(checkpoint);
  model.set_training(false);
  mfds::NoGradGuard ng;
  std::vector<const ImageU8*> ba{&a}, bb{&b};
  Tensor<float> ta = mfds::images_to_tensor<float>(ba, cfg.input_mean, cfg.input_std);
  Tensor<float> tb = mfds::images_to_tensor<float>(bb, cfg.input_mean, cfg.input_std);
  Tensor<float> logits = model.forward_full(ta, tb).final_logits.value();

  ImageU8 heat = mfds::probability_heatmap(logits, 0);
  // The mask derives from the quantized heatmap so the two outputs stay
  // exactly consistent: heat/255 >= threshold.
  ImageU8 mask(heat.h, heat.w, 1);
  for (size_t i = 0; i < heat.data.size(); ++i)
    mask.data[i] = heat.data[i] / 255.0 >= cfg.eval_threshold ? 255 : 0;
  if (fs::path(out_prefix).has_parent_path())
    fs::create_directories(fs::path(out_prefix).parent_path());
  mfds::write_png(out_prefix + "_mask.png", mask);
  mfds::write_png(out_prefix + "_heat.png", heat);
  std::printf("wrote %s_mask.png and %s_heat.png\n", out_prefix.c_str(), out_prefix.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  mfds::configure_math_threads();
  CLI::App app{"MFDS-Net change detection toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::vector<std::string> overrides;

  // Common flags mirrored into the config after file loading.
  struct Flags {
    uint64_t seed = 0;
    int epochs = 0;
    double lr = 0, threshold = 0;
    std::string data, out;
    bool seed_set = false, epochs_set = false, lr_set = false, threshold_set = false;
  } fl;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--set", overrides, "explicit key=value overrides (repeatable)");
    sub->add_option("--seed", fl.seed)->each([&fl](const std::string&) { fl.seed_set = true; });
    sub->add_option("--epochs", fl.epochs)->each([&fl](const std::string&) {
      fl.epochs_set = true;
    });
    sub->add_option("--lr", fl.lr)->each([&fl](const std::string&) { fl.lr_set = true; });
    sub->add_option("--threshold", fl.threshold)->each([&fl](const std::string&) {
      fl.threshold_set = true;
    });
    sub->add_option("--data", fl.data);
    sub->add_option("--out", fl.out);
  };

  auto* gen = app.add_subcommand("generate", "materialize a synthetic dataset");
  int gen_count = 16;
  gen->add_option("--count", gen_count, "number of sample pairs");
  add_common(gen);

  auto* tr = app.add_subcommand("train", "train a model");
  std::string resume;
  tr->add_option("--resume", resume, "checkpoint to continue from");
  add_common(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ckpt, split, overlay_dir, metrics_out = "metrics.jsonl";
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--split", split, "dataset split subdirectory (default: dataset root)");
  ev->add_option("--overlay-dir", overlay_dir, "write per-sample overlays here");
  ev->add_option("--metrics-out", metrics_out, "machine-readable metrics record (JSONL)");
  add_common(ev);

  auto* fo = app.add_subcommand("fold", "fold every DO-Conv and verify agreement");
  std::string fold_in, fold_out;
  int probes = 10, probe_size = 64;
  fo->add_option("--in", fold_in)->required();
  fo->add_option("--out-checkpoint", fold_out)->required();
  fo->add_option("--probes", probes);
  fo->add_option("--probe-size", probe_size);
  fo->add_option("--config", config_path);
  fo->add_option("--set", overrides);
  fo->add_option("--seed", fl.seed)->each([&fl](const std::string&) { fl.seed_set = true; });

  auto* pr = app.add_subcommand("predict", "predict a change mask for an image pair");
  std::string img_a, img_b, out_prefix = "prediction";
  pr->add_option("--checkpoint", ckpt);
  pr->add_option("--image-a", img_a)->required();
  pr->add_option("--image-b", img_b)->required();
  pr->add_option("--out-prefix", out_prefix);
  add_common(pr);

  auto* pc = app.add_subcommand("print-config", "dump the merged configuration");
  add_common(pc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const std::string& kv : overrides) {
      size_t eq = kv.find('=');
      mfds::check(eq != std::string::npos, "--set expects key=value, got '", kv, "'");
      cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (fl.seed_set) {
      cfg.train.seed = fl.seed;
      cfg.synth.seed = fl.seed;
    }
    if (fl.epochs_set) cfg.train.epochs = fl.epochs;
    if (fl.lr_set) cfg.train.learning_rate = fl.lr;
    if (fl.threshold_set) cfg.eval_threshold = fl.threshold;
    if (!fl.data.empty()) cfg.data_root = fl.data;
    if (!fl.out.empty()) cfg.out_dir = fl.out;

    if (gen->parsed()) return cmd_generate(cfg, cfg.out_dir, gen_count);
    if (tr->parsed()) return cmd_train(cfg, resume);
    if (ev->parsed()) return cmd_eval(cfg, ckpt, split, overlay_dir, metrics_out);
    if (fo->parsed()) return cmd_fold(cfg, fold_in, fold_out, probes, probe_size);
    if (pr->parsed()) return cmd_predict(cfg, ckpt, img_a, img_b, out_prefix);
    if (pc->parsed()) {
      for (const auto& [k, v] : cfg.dump()) std::printf("%s = %s\n", k.c_str(), v.c_str());
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
