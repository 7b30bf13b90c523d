#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mfds/datakit.hpp"
#include "mfds/supervision.hpp"
#include "mfds/train.hpp"

// Flat key=value run configuration with section prefixes. Every field has a
// default; a config file overrides defaults and command-line flags override
// the file. print-config dumps the merged view, so runs are
// self-documenting.
namespace mfds {

struct RunConfig {
  SupervisionConfig train;
  SynthConfig synth;
  ModelConfig model;
  double eval_threshold = 0.5;
  double input_mean = 0.5;
  double input_std = 0.5;
  double early_stop_f1 = 0.0;
  int max_steps = 0;
  std::string data_root;
  std::string out_dir = "runs/default";

  HarnessOptions harness() const {
    HarnessOptions h;
    h.input_mean = input_mean;
    h.input_std = input_std;
    h.threshold = eval_threshold;
    h.early_stop_f1 = early_stop_f1;
    h.max_steps = max_steps;
    h.out_dir = out_dir;
    return h;
  }

  // Ordered key -> value dump of every setting.
  std::map<std::string, std::string> dump() const {
    std::map<std::string, std::string> kv;
    auto put = [&](const std::string& k, auto v) { kv[k] = cat_msg(v); };
    put("train.theta", train.theta);
    put("train.phi", train.phi);
    put("train.lr", train.learning_rate);
    put("train.epochs", train.epochs);
    put("train.seed", train.seed);
    put("train.batch_size", train.batch_size);
    put("train.early_stop_f1", early_stop_f1);
    put("train.max_steps", max_steps);
    put("model.base_channels", model.base_channels);
    put("model.gsem_reduction", model.gsem_reduction);
    put("model.dfim_reduction", model.dfim_reduction);
    put("model.cbam_reduction", model.cbam_reduction);
    put("model.sigma", model.gaussian_sigma);
    put("model.dfim_literal_eq16", model.dfim_literal_sum ? 1 : 0);
    std::ostringstream grids;
    for (size_t i = 0; i < model.scm_grids.size(); ++i)
      grids << (i ? "," : "") << model.scm_grids[i];
    kv["model.scm_grids"] = grids.str();
    put("synth.size", synth.size);
    put("synth.seed", synth.seed);
    put("synth.min_shapes", synth.min_shapes);
    put("synth.max_shapes", synth.max_shapes);
    put("synth.p_appear", synth.p_appear);
    put("synth.p_disappear", synth.p_disappear);
    put("synth.p_persist", synth.p_persist);
    put("synth.p_color_change", synth.p_color_change);
    put("synth.p_lshape", synth.p_lshape);
    put("synth.p_shadow", synth.p_shadow);
    put("synth.texture_noise", synth.texture_noise);
    put("synth.illumination", synth.illumination);
    put("eval.threshold", eval_threshold);
    put("io.input_mean", input_mean);
    put("io.input_std", input_std);
    put("paths.data", data_root);
    put("paths.out", out_dir);
    return kv;
  }

  void apply(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(value)); };
    auto as_double = [&] { return std::stod(value); };
    if (key == "train.theta") train.theta = as_double();
    else if (key == "train.phi") train.phi = as_double();
    else if (key == "train.lr") train.learning_rate = as_double();
    else if (key == "train.epochs") train.epochs = as_int();
    else if (key == "train.seed") train.seed = as_u64();
    else if (key == "train.batch_size") train.batch_size = as_int();
    else if (key == "train.early_stop_f1") early_stop_f1 = as_double();
    else if (key == "train.max_steps") max_steps = as_int();
    else if (key == "model.base_channels") model.base_channels = as_int();
    else if (key == "model.gsem_reduction") model.gsem_reduction = as_int();
    else if (key == "model.dfim_reduction") model.dfim_reduction = as_int();
    else if (key == "model.cbam_reduction") model.cbam_reduction = as_int();
    else if (key == "model.sigma") model.gaussian_sigma = as_double();
    else if (key == "model.dfim_literal_eq16") model.dfim_literal_sum = as_int() != 0;
    else if (key == "model.scm_grids") {
      model.scm_grids.clear();
      std::istringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) model.scm_grids.push_back(std::stoi(tok));
      check(!model.scm_grids.empty(), "config: model.scm_grids must list at least one grid");
    } else if (key == "synth.size") synth.size = as_int();
    else if (key == "synth.seed") synth.seed = as_u64();
    else if (key == "synth.min_shapes") synth.min_shapes = as_int();
    else if (key == "synth.max_shapes") synth.max_shapes = as_int();
    else if (key == "synth.p_appear") synth.p_appear = as_double();
    else if (key == "synth.p_disappear") synth.p_disappear = as_double();
    else if (key == "synth.p_persist") synth.p_persist = as_double();
    else if (key == "synth.p_color_change") synth.p_color_change = as_double();
    else if (key == "synth.p_lshape") synth.p_lshape = as_double();
    else if (key == "synth.p_shadow") synth.p_shadow = as_double();
    else if (key == "synth.texture_noise") synth.texture_noise = as_double();
    else if (key == "synth.illumination") synth.illumination = as_double();
    else if (key == "eval.threshold") eval_threshold = as_double();
    else if (key == "io.input_mean") input_mean = as_double();
    else if (key == "io.input_std") input_std = as_double();
    else if (key == "paths.data") data_root = value;
    else if (key == "paths.out") out_dir = value;
    else throw std::invalid_argument(cat_msg("config: unknown key '", key, "'"));
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "config: cannot open ", path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      size_t eq = line.find('=');
      check(eq != std::string::npos, "config: ", path, ":", lineno, ": expected key=value");
      apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
};

}  // namespace mfds
