#pragma once

#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "diffe/data.hpp"
#include "diffe/networks.hpp"

namespace diffe {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"in_channels", cfg.in_channels},
                        {"time_dim", cfg.time_dim},
                        {"groups", cfg.groups},
                        {"ddpm_widths", cfg.ddpm_widths},
                        {"enc_widths", cfg.enc_widths},
                        {"dec_width", cfg.dec_width},
                        {"classes", cfg.classes},
                        {"classifier_hidden", cfg.classifier_hidden}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.time_dim = j.at("time_dim").get<std::size_t>();
  cfg.groups = j.at("groups").get<std::size_t>();
  cfg.ddpm_widths = j.at("ddpm_widths").get<std::array<std::size_t, 3>>();
  cfg.enc_widths = j.at("enc_widths").get<std::array<std::size_t, 3>>();
  cfg.dec_width = j.at("dec_width").get<std::size_t>();
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
  return cfg;
}

// Binary parameter container plus a JSON sidecar carrying the model config
// and parameter counts. Round-trips are bit-exact.
inline void save_checkpoint(const std::string& path, const ModelBundle<float>& bundle,
                            const nlohmann::json& sidecar_extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::write_magic(out, kKindCheckpoint);
  const auto params = bundle.named_params();
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) detail::write_le<std::uint64_t>(out, d);
    detail::write_le_array(out, tensor.data(), tensor.size());
  }
  if (!out) throw IoError("write failed for " + path);

  const ParamCounts counts = bundle.param_count();
  nlohmann::json j = sidecar_extra;
  j["kind"] = "checkpoint";
  j["mode"] = to_string(bundle.mode);
  j["model"] = model_config_to_json(bundle.config);
  j["parameter_counts"] = {{"theta", counts.theta},
                           {"phi", counts.phi},
                           {"psi", counts.psi},
                           {"rho", counts.rho},
                           {"networks_combined", counts.networks_combined()},
                           {"total", counts.total()}};
  detail::write_sidecar(path, j);
}

inline ModelBundle<float> load_checkpoint(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw FormatError("checkpoint sidecar missing: " + path + ".json");
  nlohmann::json j;
  side >> j;
  if (j.value("kind", "") != "checkpoint") {
    throw FormatError(path + ".json: sidecar kind is not 'checkpoint'");
  }
  const ModelConfig cfg = model_config_from_json(j.at("model"));
  const AblationMode mode = ablation_mode_from_string(j.at("mode").get<std::string>());
  ModelBundle<float> bundle = ModelBundle<float>::init(cfg, mode, 0);

  std::map<std::string, Tensor<float>> by_name;
  for (auto& [name, tensor] : bundle.named_params()) by_name.emplace(name, tensor);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  detail::read_magic(in, kKindCheckpoint, path);
  std::uint32_t count = 0;
  detail::read_le(in, count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    detail::read_le(in, name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError(path + ": truncated parameter name");
    std::uint32_t ndim = 0;
    detail::read_le(in, ndim);
    Shape shape(ndim);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      detail::read_le(in, v);
      d = v;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError(path + ": unknown parameter '" + name + "' for this configuration");
    }
    if (it->second.shape() != shape) {
      throw FormatError(path + ": parameter '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(it->second.shape()));
    }
    detail::read_le_array(in, it->second.data(), it->second.size());
  }
  return bundle;
}

}  // namespace diffe
