#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffe/data.hpp"
#include "diffe/networks.hpp"
#include "diffe/sigproc.hpp"
#include "diffe/training.hpp"

namespace diffe {

// Resolved configuration of a whole run; every field has a default, a config
// file only overrides.
struct RunConfig {
  SyntheticConfig data;
  PreprocessConfig preprocess;
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Minimal INI: [section] headers, key = value lines, # or ; comments.
class IniFile {
 public:
  void parse(const std::string& text, std::vector<std::string>& errors) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          errors.push_back("line " + std::to_string(line_no) + ": malformed section header");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty()) {
        errors.push_back("line " + std::to_string(line_no) + ": key '" + key +
                         "' appears before any [section]");
        continue;
      }
      values_[section + "." + key] = value;
    }
  }

  bool has(const std::string& path) const { return values_.count(path) > 0; }

  std::string take(const std::string& path) {
    consumed_.insert(path);
    return values_.at(path);
  }

  std::vector<std::string> unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!consumed_.count(k)) out.push_back(k);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

inline bool parse_double(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end != nullptr && *end == '\0' && !s.empty();
}

inline bool parse_size(const std::string& s, std::size_t& out) {
  double d = 0.0;
  if (!parse_double(s, d) || d < 0.0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
    return false;
  }
  out = static_cast<std::size_t>(d);
  return true;
}

struct ConfigReader {
  IniFile& ini;
  std::vector<std::string>& errors;

  void get(const std::string& path, double& slot) {
    if (!ini.has(path)) return;
    double v = 0.0;
    if (!parse_double(ini.take(path), v)) {
      errors.push_back(path + ": cannot parse value as a number");
      return;
    }
    slot = v;
  }

  void get(const std::string& path, std::size_t& slot) {
    if (!ini.has(path)) return;
    std::size_t v = 0;
    if (!parse_size(ini.take(path), v)) {
      errors.push_back(path + ": cannot parse value as a non-negative integer");
      return;
    }
    slot = v;
  }

  void get_list(const std::string& path, std::vector<double>& slot) {
    if (!ini.has(path)) return;
    std::vector<double> out;
    std::istringstream in(ini.take(path));
    std::string item;
    while (std::getline(in, item, ',')) {
      double v = 0.0;
      if (!parse_double(trim(item), v)) {
        errors.push_back(path + ": cannot parse list entry '" + trim(item) + "'");
        return;
      }
      out.push_back(v);
    }
    slot = std::move(out);
  }

  void get_widths(const std::string& path, std::array<std::size_t, 3>& slot) {
    if (!ini.has(path)) return;
    std::vector<double> list;
    std::istringstream in(ini.take(path));
    std::string item;
    while (std::getline(in, item, ',')) {
      double v = 0.0;
      if (!parse_double(trim(item), v)) {
        errors.push_back(path + ": cannot parse list entry '" + trim(item) + "'");
        return;
      }
      list.push_back(v);
    }
    if (list.size() != 3) {
      errors.push_back(path + ": expected exactly 3 comma-separated widths");
      return;
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (list[i] < 1.0) {
        errors.push_back(path + ": widths must be positive");
        return;
      }
      slot[i] = static_cast<std::size_t>(list[i]);
    }
  }
};

}  // namespace detail

inline RunConfig default_run_config() { return RunConfig{}; }

// Parses and validates; reports every violation at once, keyed by
// section.key paths.
inline RunConfig parse_run_config(const std::string& text) {
  std::vector<std::string> errors;
  detail::IniFile ini;
  ini.parse(text, errors);

  RunConfig cfg;
  detail::ConfigReader r{ini, errors};

  r.get("data.subjects", cfg.data.subjects);
  r.get("data.per_class", cfg.data.per_class);
  r.get("data.channels", cfg.data.channels);
  r.get("data.fs", cfg.data.fs);
  r.get("data.snr_db", cfg.data.snr_db);
  r.get("data.line_noise_amp", cfg.data.line_noise_amp);
  r.get("data.spacing_s", cfg.data.spacing_s);
  r.get("data.seed", cfg.data.seed);

  r.get("preprocess.band_low", cfg.preprocess.band_low);
  r.get("preprocess.band_high", cfg.preprocess.band_high);
  r.get_list("preprocess.notch", cfg.preprocess.notch_freqs);
  r.get("preprocess.notch_q", cfg.preprocess.notch_q);
  r.get("preprocess.gamma_low", cfg.preprocess.gamma_low);
  r.get("preprocess.epoch_s", cfg.preprocess.epoch_s);
  r.get("preprocess.baseline_s", cfg.preprocess.baseline_s);

  r.get("model.time_dim", cfg.model.time_dim);
  r.get("model.groups", cfg.model.groups);
  r.get_widths("model.ddpm_widths", cfg.model.ddpm_widths);
  r.get_widths("model.enc_widths", cfg.model.enc_widths);
  r.get("model.dec_width", cfg.model.dec_width);
  r.get("model.classifier_hidden", cfg.model.classifier_hidden);

  r.get("train.alpha", cfg.train.alpha);
  r.get("train.epochs", cfg.train.epochs);
  r.get("train.batch_size", cfg.train.batch_size);
  r.get("train.base_lr", cfg.train.base_lr);
  r.get("train.max_lr", cfg.train.max_lr);
  r.get("train.lr_step_epochs", cfg.train.lr_step_epochs);
  r.get("train.T", cfg.train.diffusion_steps);
  r.get("train.beta_start", cfg.train.beta_start);
  r.get("train.beta_end", cfg.train.beta_end);
  r.get("train.seed", cfg.train.seed);
  r.get("train.test_fraction", cfg.train.test_fraction);
  if (ini.has("train.ablation_mode")) {
    try {
      cfg.train.mode = ablation_mode_from_string(ini.take("train.ablation_mode"));
    } catch (const ConfigError& e) {
      errors.push_back(std::string("train.ablation_mode: ") + e.what());
    }
  }

  for (const auto& key : ini.unconsumed()) {
    errors.push_back(key + ": unknown configuration key");
  }

  // cross-field constraints
  if (cfg.data.per_class < 1) errors.push_back("data.per_class: must be >= 1");
  if (cfg.data.channels < 1) errors.push_back("data.channels: must be >= 1");
  if (!(cfg.data.fs > 0.0)) errors.push_back("data.fs: must be positive");
  if (cfg.train.alpha < 0.0) errors.push_back("train.alpha: must be >= 0");
  if (cfg.train.epochs < 1) errors.push_back("train.epochs: must be >= 1");
  if (cfg.train.batch_size < 1) errors.push_back("train.batch_size: must be >= 1");
  if (!(cfg.train.test_fraction > 0.0 && cfg.train.test_fraction < 1.0)) {
    errors.push_back("train.test_fraction: must lie in (0, 1)");
  }
  if (!(cfg.train.base_lr > 0.0) || cfg.train.base_lr > cfg.train.max_lr) {
    errors.push_back("train.base_lr: must be positive and <= train.max_lr");
  }
  if (cfg.train.lr_step_epochs < 1) errors.push_back("train.lr_step_epochs: must be >= 1");
  if (cfg.train.diffusion_steps < 1) errors.push_back("train.T: must be >= 1");
  if (!(cfg.train.beta_start > 0.0 && cfg.train.beta_start <= cfg.train.beta_end &&
        cfg.train.beta_end < 1.0)) {
    errors.push_back("train.beta_start/train.beta_end: need 0 < start <= end < 1");
  }
  if (cfg.model.time_dim == 0 || cfg.model.time_dim % 2 != 0) {
    errors.push_back("model.time_dim: must be a positive even number");
  }
  if (cfg.model.groups < 1) errors.push_back("model.groups: must be >= 1");
  if (cfg.model.dec_width < 1) errors.push_back("model.dec_width: must be >= 1");

  const double nyquist_limit = 0.95 * cfg.data.fs / 2.0;
  if (!(cfg.preprocess.band_low > 0.0 && cfg.preprocess.band_low < cfg.preprocess.band_high)) {
    errors.push_back("preprocess.band_low: need 0 < band_low < band_high");
  }
  if (cfg.preprocess.band_high > nyquist_limit) {
    errors.push_back("preprocess.band_high: " + std::to_string(cfg.preprocess.band_high) +
                     " Hz exceeds 0.95*Nyquist = " + std::to_string(nyquist_limit) + " Hz at fs = " +
                     std::to_string(cfg.data.fs));
  }
  for (double f : cfg.preprocess.notch_freqs) {
    if (!(f > 0.0 && f < cfg.data.fs / 2.0)) {
      errors.push_back("preprocess.notch: frequency " + std::to_string(f) +
                       " Hz must lie below Nyquist " + std::to_string(cfg.data.fs / 2.0) + " Hz");
    }
  }
  if (!(cfg.data.fs / 2.0 > cfg.preprocess.gamma_low)) {
    errors.push_back("preprocess.gamma_low: band edge must lie below Nyquist");
  }
  if (!(cfg.preprocess.epoch_s > 0.0) || !(cfg.preprocess.baseline_s > 0.0)) {
    errors.push_back("preprocess.epoch_s/baseline_s: must be positive");
  } else {
    const std::size_t samples =
        static_cast<std::size_t>(std::lround(cfg.preprocess.epoch_s * cfg.data.fs));
    if (samples % 8 != 0) {
      errors.push_back("preprocess.epoch_s: epoch length " + std::to_string(samples) +
                       " samples at fs = " + std::to_string(cfg.data.fs) +
                       " is not divisible by 8 (three stride-2 stages)");
    }
    const double need = cfg.preprocess.epoch_s + cfg.preprocess.baseline_s;
    if (cfg.data.spacing_s < need) {
      errors.push_back("data.spacing_s: must be at least epoch_s + baseline_s = " +
                       std::to_string(need));
    }
  }

  if (!errors.empty()) {
    std::string msg = "configuration invalid:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  cfg.model.in_channels = cfg.data.channels;
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return nlohmann::json{
      {"data",
       {{"subjects", cfg.data.subjects},
        {"per_class", cfg.data.per_class},
        {"classes", cfg.data.classes},
        {"channels", cfg.data.channels},
        {"fs", cfg.data.fs},
        {"snr_db", cfg.data.snr_db},
        {"line_noise_amp", cfg.data.line_noise_amp},
        {"spacing_s", cfg.data.spacing_s},
        {"seed", cfg.data.seed}}},
      {"preprocess",
       {{"band_low", cfg.preprocess.band_low},
        {"band_high", cfg.preprocess.band_high},
        {"notch", cfg.preprocess.notch_freqs},
        {"notch_q", cfg.preprocess.notch_q},
        {"gamma_low", cfg.preprocess.gamma_low},
        {"epoch_s", cfg.preprocess.epoch_s},
        {"baseline_s", cfg.preprocess.baseline_s}}},
      {"model", model_config_to_json(cfg.model)},
      {"train",
       {{"alpha", cfg.train.alpha},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"max_lr", cfg.train.max_lr},
        {"lr_step_epochs", cfg.train.lr_step_epochs},
        {"T", cfg.train.diffusion_steps},
        {"beta_start", cfg.train.beta_start},
        {"beta_end", cfg.train.beta_end},
        {"seed", cfg.train.seed},
        {"test_fraction", cfg.train.test_fraction},
        {"ablation_mode", to_string(cfg.train.mode)}}}};
}

}  // namespace diffe
