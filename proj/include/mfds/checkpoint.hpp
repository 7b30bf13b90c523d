#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mfds/supervision.hpp"
#include "mfds/tensor.hpp"

// Checkpoint container: a JSON metadata record (config, epoch, best F1,
// folded flag) followed by dotted parameter names mapped to shape-tagged
// float32 arrays. Parameters and normalization running statistics are both
// stored, so save -> load -> forward round-trips bitwise for float models.
namespace mfds {

inline constexpr char kCheckpointMagic[8] = {'M', 'F', 'D', 'S', 'C', 'K', 'P', '1'};

struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> entries;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {
template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace detail

inline void save_checkpoint_data(const std::string& path, const CheckpointData& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "checkpoint: cannot open ", path, " for writing");
  os.write(kCheckpointMagic, 8);
  std::string meta = ckpt.meta.dump();
  detail::write_pod(os, static_cast<uint64_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::write_pod(os, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    detail::write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    int32_t dims[4] = {t.n, t.c, t.h, t.w};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  check(os.good(), "checkpoint: write to ", path, " failed");
}

inline CheckpointData load_checkpoint_data(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "checkpoint: cannot open ", path);
  char magic[8];
  is.read(magic, 8);
  check(is.good() && std::equal(magic, magic + 8, kCheckpointMagic), "checkpoint: ", path,
        " is not a checkpoint file");
  uint64_t meta_len = 0;
  detail::read_pod(is, meta_len);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  CheckpointData ckpt;
  ckpt.meta = nlohmann::json::parse(meta);
  uint32_t n = 0;
  detail::read_pod(is, n);
  ckpt.entries.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t name_len = 0;
    detail::read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    int32_t dims[4];
    is.read(reinterpret_cast<char*>(dims), sizeof(dims));
    Tensor<float> t(dims[0], dims[1], dims[2], dims[3]);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    check(is.good(), "checkpoint: truncated entry ", name, " in ", path);
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return nlohmann::json{{"base_channels", m.base_channels},
                        {"gsem_reduction", m.gsem_reduction},
                        {"dfim_reduction", m.dfim_reduction},
                        {"cbam_reduction", m.cbam_reduction},
                        {"gaussian_sigma", m.gaussian_sigma},
                        {"scm_grids", m.scm_grids},
                        {"dfim_literal_sum", m.dfim_literal_sum}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.base_channels = j.value("base_channels", m.base_channels);
  m.gsem_reduction = j.value("gsem_reduction", m.gsem_reduction);
  m.dfim_reduction = j.value("dfim_reduction", m.dfim_reduction);
  m.cbam_reduction = j.value("cbam_reduction", m.cbam_reduction);
  m.gaussian_sigma = j.value("gaussian_sigma", m.gaussian_sigma);
  if (j.contains("scm_grids")) m.scm_grids = j["scm_grids"].get<std::vector<int>>();
  m.dfim_literal_sum = j.value("dfim_literal_sum", m.dfim_literal_sum);
  return m;
}

template <typename T>
void save_checkpoint(const std::string& path, MfdsNet<T>& model, nlohmann::json extra_meta,
                     bool folded) {
  CheckpointData ckpt;
  ckpt.meta = std::move(extra_meta);
  ckpt.meta["format"] = "mfds-checkpoint";
  ckpt.meta["folded"] = folded;
  ckpt.meta["model"] = model_config_json(model.config());
  for (auto& [name, var] : model.named_parameters())
    ckpt.entries.emplace_back(name, var.value().template cast<float>());
  for (auto& [name, buf] : model.named_buffers())
    ckpt.entries.emplace_back(name, buf->template cast<float>());
  save_checkpoint_data(path, ckpt);
}

// Restores into a freshly constructed model; the checkpoint's model config
// must match. Folded checkpoints fold the target model first so the folded
// weight tensors exist.
template <typename T>
void load_into_model(const CheckpointData& ckpt, MfdsNet<T>& model) {
  if (ckpt.meta.value("folded", false)) model.fold();
  auto assign = [&](const std::string& name, Tensor<T>& dst) {
    const Tensor<float>* src = ckpt.find(name);
    check(src != nullptr, "checkpoint: missing entry ", name);
    check(src->n == dst.n && src->c == dst.c && src->h == dst.h && src->w == dst.w,
          "checkpoint: shape mismatch for ", name, ": file ", src->shape_str(), " vs model ",
          dst.shape_str());
    for (int64_t i = 0; i < dst.size(); ++i) dst.data[i] = static_cast<T>(src->data[i]);
  };
  for (auto& [name, var] : model.named_parameters()) assign(name, var.mutable_value());
  for (auto& [name, buf] : model.named_buffers()) assign(name, *buf);
}

// Convenience: rebuild the model a checkpoint was saved from.
template <typename T>
MfdsNet<T> load_model(const std::string& path, CheckpointData* out_meta = nullptr) {
  CheckpointData ckpt = load_checkpoint_data(path);
  ModelConfig mcfg = model_config_from_json(ckpt.meta.value("model", nlohmann::json::object()));
  MfdsNet<T> model(0, mcfg);
  load_into_model(ckpt, model);
  if (out_meta) *out_meta = std::move(ckpt);
  return model;
}

}  // namespace mfds
