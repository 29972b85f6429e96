#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "nls/diffusion/codec.hpp"
#include "nls/diffusion/model.hpp"
#include "nls/diffusion/train.hpp"
#include "nls/nn/param_io.hpp"

namespace nls::diffusion {

struct ScheduleConfig {
  int steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  NoiseSchedule make() const { return make_schedule(steps, beta_min, beta_max); }
};

/// Everything needed to rebuild a trained model besides the weights.
struct CheckpointMeta {
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  std::string codec = "identity";
  int caption_dim = 32;
  std::uint64_t caption_seed = 0;
  int layout_channels = 0;  // 0: no adapter
  std::uint64_t adapter_seed = 0;
  std::string projector_id;
  std::vector<LossPoint> loss_curve;
  std::string rng_state;
};

inline nlohmann::json to_json(const CheckpointMeta& m) {
  const auto& d = m.denoiser;
  return {
      {"denoiser",
       {{"resolution", d.resolution},
        {"image_channels", d.image_channels},
        {"channels", d.channels},
        {"groups", d.groups},
        {"time_dim", d.time_dim},
        {"emb_dim", d.emb_dim},
        {"caption_dim", d.caption_dim},
        {"steps", d.steps},
        {"seed", d.seed}}},
      {"schedule", {{"steps", m.schedule.steps}, {"beta_min", m.schedule.beta_min}, {"beta_max", m.schedule.beta_max}}},
      {"codec", m.codec},
      {"caption", {{"dim", m.caption_dim}, {"seed", m.caption_seed}}},
      {"adapter", {{"layout_channels", m.layout_channels}, {"seed", m.adapter_seed}, {"projector_id", m.projector_id}}},
  };
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  const auto& d = j.at("denoiser");
  m.denoiser.resolution = d.at("resolution");
  m.denoiser.image_channels = d.at("image_channels");
  m.denoiser.channels = d.at("channels").get<std::array<int, 3>>();
  m.denoiser.groups = d.at("groups");
  m.denoiser.time_dim = d.at("time_dim");
  m.denoiser.emb_dim = d.at("emb_dim");
  m.denoiser.caption_dim = d.at("caption_dim");
  m.denoiser.steps = d.at("steps");
  m.denoiser.seed = d.at("seed");
  m.schedule = {j.at("schedule").at("steps"), j.at("schedule").at("beta_min"), j.at("schedule").at("beta_max")};
  m.codec = j.at("codec");
  m.caption_dim = j.at("caption").at("dim");
  m.caption_seed = j.at("caption").at("seed");
  m.layout_channels = j.at("adapter").at("layout_channels");
  m.adapter_seed = j.at("adapter").at("seed");
  m.projector_id = j.at("adapter").at("projector_id");
  return m;
}

inline std::string loss_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out << "step,loss\n";
  out.precision(9);
  for (const auto& p : curve) out << p.step << ',' << p.loss << '\n';
  return out.str();
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

struct LoadedModel {
  CheckpointMeta meta;
  std::unique_ptr<Denoiser<float>> base;
  std::unique_ptr<Adapter<float>> adapter;
};

/// Writes config.json, base.nlck, adapter.nlck (when present), loss.csv and rng_state.txt.
inline void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta, Denoiser<float>& base,
                            Adapter<float>* adapter) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "config.json", to_json(meta).dump(2) + "\n");
  nn::save_params(base.params(), dir / "base.nlck");
  if (adapter) nn::save_params(adapter->params(), dir / "adapter.nlck");
  io::write_file(dir / "loss.csv", loss_csv(meta.loss_curve));
  io::write_file(dir / "rng_state.txt", meta.rng_state + "\n");
}

inline LoadedModel load_checkpoint(const std::filesystem::path& dir) {
  const auto config_path = dir / "config.json";
  if (!std::filesystem::exists(config_path)) {
    throw ResolutionError("no checkpoint at " + dir.string() + " (missing config.json); run `train` first");
  }
  LoadedModel out;
  try {
    out.meta = meta_from_json(nlohmann::json::parse(io::read_file(config_path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(config_path.string() + ": " + e.what());
  }
  out.base = std::make_unique<Denoiser<float>>(out.meta.denoiser);
  nn::load_params(out.base->params(), dir / "base.nlck");
  if (out.meta.layout_channels > 0 && std::filesystem::exists(dir / "adapter.nlck")) {
    out.adapter = std::make_unique<Adapter<float>>(*out.base, out.meta.layout_channels, out.meta.adapter_seed);
    nn::load_params(out.adapter->params(), dir / "adapter.nlck");
  }
  return out;
}

}  // namespace nls::diffusion
