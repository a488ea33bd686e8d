#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffe/sigproc.hpp"

namespace diffe {

// File kinds sharing the "DIFE" container magic.
inline constexpr std::uint32_t kKindRecording = 1;
inline constexpr std::uint32_t kKindEpochs = 2;
inline constexpr std::uint32_t kKindCheckpoint = 3;

struct SyntheticConfig {
  std::size_t subjects = 1;
  std::size_t per_class = 100;
  std::size_t classes = 13;  // 12 signal classes + rest
  std::size_t channels = 64;
  double fs = 512.0;
  double snr_db = 0.0;
  double line_noise_amp = 2.0;
  double spacing_s = 3.5;
  std::uint64_t seed = 42;
};

// Burst carrier for class k; class 12 (rest) carries none. All carriers sit
// inside the 70-125 Hz band so band selection is what exposes them.
inline double class_burst_freq(int k) { return 72.0 + 4.0 * static_cast<double>(k); }

struct SubjectRecording {
  Recording rec;
  EventList events;
};

namespace detail {

// Paul Kellet's economy pink-noise filter over white Gaussian input.
class PinkNoise {
 public:
  explicit PinkNoise(Rng& rng) : rng_(rng) {}
  double next() {
    const double w = rng_.normal();
    b0_ = 0.99765 * b0_ + w * 0.0990460;
    b1_ = 0.96300 * b1_ + w * 0.2965164;
    b2_ = 0.57000 * b2_ + w * 1.0526913;
    return b0_ + b1_ + b2_ + w * 0.1848;
  }

 private:
  Rng& rng_;
  double b0_ = 0.0, b1_ = 0.0, b2_ = 0.0;
};

}  // namespace detail

// Continuous recording: unit-variance 1/f background per channel, common
// 60/120 Hz line components with per-channel gains, and one narrowband burst
// with a class-specific spatial mixing vector per (non-rest) event.
inline SubjectRecording generate_synthetic_subject(const SyntheticConfig& cfg,
                                                   std::size_t subject = 0) {
  if (cfg.per_class < 1) throw ConfigError("generate_synthetic: per_class must be >= 1");
  if (cfg.classes != 13) throw ConfigError("generate_synthetic: the task is fixed at 13 classes");
  if (cfg.channels < 1) throw ConfigError("generate_synthetic: need at least one channel");
  const double top_freq = class_burst_freq(11);
  if (!(cfg.fs / 2.0 > top_freq)) {
    throw ConfigError("generate_synthetic: fs " + std::to_string(cfg.fs) +
                      " cannot carry class carriers up to " + std::to_string(top_freq) + " Hz");
  }
  const std::size_t epoch_len = static_cast<std::size_t>(std::lround(2.0 * cfg.fs));
  const std::size_t spacing = static_cast<std::size_t>(std::lround(cfg.spacing_s * cfg.fs));
  if (spacing < epoch_len + static_cast<std::size_t>(std::lround(0.5 * cfg.fs))) {
    throw ConfigError("generate_synthetic: event spacing " + std::to_string(cfg.spacing_s) +
                      " s cannot hold a 2 s epoch plus 0.5 s baseline");
  }

  const std::size_t n_events = cfg.per_class * cfg.classes;
  const std::size_t lead = 4 * static_cast<std::size_t>(std::lround(cfg.fs));
  const std::size_t total = 2 * lead + n_events * spacing;

  SubjectRecording out;
  out.rec = Recording::zeros(cfg.channels, total, cfg.fs);

  // per-channel pink background, normalized to unit variance
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    Rng rng(cfg.seed, "gen.noise.s" + std::to_string(subject) + ".c" + std::to_string(c));
    detail::PinkNoise pink(rng);
    float* rowp = out.rec.row(c);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      const double v = pink.next();
      rowp[i] = static_cast<float>(v);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(total);
    const double var = sum2 / static_cast<double>(total) - mean * mean;
    const float scale = static_cast<float>(1.0 / std::sqrt(std::max(var, 1e-12)));
    for (std::size_t i = 0; i < total; ++i) rowp[i] = (rowp[i] - static_cast<float>(mean)) * scale;
  }

  // line interference: common phase per frequency, gain varies by channel
  {
    Rng rng(cfg.seed, "gen.line.s" + std::to_string(subject));
    const double two_pi = 6.283185307179586476925286766559;
    for (double f : {60.0, 120.0}) {
      const double phase = rng.uniform(0.0, two_pi);
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double gain = cfg.line_noise_amp * rng.uniform(0.75, 1.25);
        float* rowp = out.rec.row(c);
        for (std::size_t i = 0; i < total; ++i) {
          rowp[i] += static_cast<float>(
              gain * std::sin(two_pi * f * static_cast<double>(i) / cfg.fs + phase));
        }
      }
    }
  }

  // class-specific spatial mixing vectors, normalized to mean-square 1
  std::vector<std::vector<double>> mixing(cfg.classes);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    Rng rng(cfg.seed, "gen.mix.k" + std::to_string(k));
    auto& m = mixing[k];
    m.resize(cfg.channels);
    double ss = 0.0;
    for (auto& v : m) {
      v = rng.normal();
      ss += v * v;
    }
    const double scale = std::sqrt(static_cast<double>(cfg.channels) / std::max(ss, 1e-12));
    for (auto& v : m) v *= scale;
  }

  // deterministic label order, exactly per_class events per class
  std::vector<int> order;
  order.reserve(n_events);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    for (std::size_t r = 0; r < cfg.per_class; ++r) order.push_back(static_cast<int>(k));
  }
  {
    Rng rng(cfg.seed, "gen.order.s" + std::to_string(subject));
    rng.shuffle(order);
  }

  // burst amplitude from the SNR target: mean per-channel burst power during
  // the window (Hann envelope, mean-square 3/8) vs unit background variance
  const double snr = std::pow(10.0, cfg.snr_db / 10.0);
  const double amp = std::sqrt(snr * 16.0 / 3.0);
  const double two_pi = 6.283185307179586476925286766559;

  Rng burst_rng(cfg.seed, "gen.burst.s" + std::to_string(subject));
  out.events.reserve(n_events);
  for (std::size_t e = 0; e < n_events; ++e) {
    const std::size_t at = lead + e * spacing;
    const int k = order[e];
    out.events.push_back(Event{at, k});
    if (k == 12) continue;  // rest: no burst
    const double f = class_burst_freq(k);
    const double phase = burst_rng.uniform(0.0, two_pi);
    std::vector<double> wave(epoch_len);
    for (std::size_t i = 0; i < epoch_len; ++i) {
      const double env =
          0.5 * (1.0 - std::cos(two_pi * static_cast<double>(i) / static_cast<double>(epoch_len)));
      wave[i] = amp * env * std::sin(two_pi * f * static_cast<double>(i) / cfg.fs + phase);
    }
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const double g = mixing[static_cast<std::size_t>(k)][c];
      float* rowp = out.rec.row(c) + at;
      for (std::size_t i = 0; i < epoch_len; ++i) rowp[i] += static_cast<float>(g * wave[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// container persistence (little-endian, "DIFE" magic)
// ---------------------------------------------------------------------------
namespace detail {

inline void write_magic(std::ostream& out, std::uint32_t kind) {
  out.write("DIFE", 4);
  write_le<std::uint32_t>(out, kFormatVersion);
  write_le<std::uint32_t>(out, kind);
}

inline void read_magic(std::istream& in, std::uint32_t expected_kind, const std::string& what) {
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DIFE") {
    throw FormatError(what + ": bad magic, not a DIFE container");
  }
  std::uint32_t version = 0, kind = 0;
  read_le(in, version);
  if (version != kFormatVersion) {
    throw FormatError(what + ": unsupported format version " + std::to_string(version));
  }
  read_le(in, kind);
  if (kind != expected_kind) {
    throw FormatError(what + ": container kind " + std::to_string(kind) + " is not the expected " +
                      std::to_string(expected_kind));
  }
}

inline void write_sidecar(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path + ".json");
  if (!out) throw IoError("cannot write sidecar " + path + ".json");
  out << j.dump(2) << "\n";
}

}  // namespace detail

inline void save_epochs(const std::string& path, const EpochSet& set,
                        const nlohmann::json& sidecar_extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::write_magic(out, kKindEpochs);
  detail::write_le<std::uint64_t>(out, set.trials);
  detail::write_le<std::uint64_t>(out, set.channels);
  detail::write_le<std::uint64_t>(out, set.samples);
  detail::write_le<double>(out, set.fs);
  std::vector<std::int32_t> labels32(set.labels.begin(), set.labels.end());
  detail::write_le_array(out, labels32.data(), labels32.size());
  detail::write_le_array(out, set.data.data(), set.data.size());
  nlohmann::json j = sidecar_extra;
  j["kind"] = "epochs";
  j["trials"] = set.trials;
  j["channels"] = set.channels;
  j["samples"] = set.samples;
  j["fs"] = set.fs;
  detail::write_sidecar(path, j);
}

inline EpochSet load_epochs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  detail::read_magic(in, kKindEpochs, path);
  EpochSet set;
  std::uint64_t trials = 0, channels = 0, samples = 0;
  detail::read_le(in, trials);
  detail::read_le(in, channels);
  detail::read_le(in, samples);
  detail::read_le(in, set.fs);
  set.trials = trials;
  set.channels = channels;
  set.samples = samples;
  std::vector<std::int32_t> labels32(trials);
  detail::read_le_array(in, labels32.data(), labels32.size());
  set.labels.assign(labels32.begin(), labels32.end());
  set.data.resize(trials * channels * samples);
  detail::read_le_array(in, set.data.data(), set.data.size());
  return set;
}

inline void save_recording(const std::string& path, const Recording& rec, const EventList& events,
                           const nlohmann::json& sidecar_extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::write_magic(out, kKindRecording);
  detail::write_le<std::uint64_t>(out, rec.channels);
  detail::write_le<std::uint64_t>(out, rec.samples);
  detail::write_le<double>(out, rec.fs);
  detail::write_le<std::uint64_t>(out, events.size());
  for (const auto& e : events) {
    detail::write_le<std::uint64_t>(out, e.sample);
    detail::write_le<std::int32_t>(out, e.label);
  }
  detail::write_le_array(out, rec.data.data(), rec.data.size());
  nlohmann::json j = sidecar_extra;
  j["kind"] = "recording";
  j["channels"] = rec.channels;
  j["samples"] = rec.samples;
  j["fs"] = rec.fs;
  j["events"] = events.size();
  detail::write_sidecar(path, j);
}

inline SubjectRecording load_recording(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  detail::read_magic(in, kKindRecording, path);
  SubjectRecording out;
  std::uint64_t channels = 0, samples = 0, n_events = 0;
  detail::read_le(in, channels);
  detail::read_le(in, samples);
  detail::read_le(in, out.rec.fs);
  detail::read_le(in, n_events);
  out.events.resize(n_events);
  for (auto& e : out.events) {
    std::uint64_t s = 0;
    std::int32_t l = 0;
    detail::read_le(in, s);
    detail::read_le(in, l);
    e.sample = s;
    e.label = l;
  }
  out.rec.channels = channels;
  out.rec.samples = samples;
  out.rec.data.resize(channels * samples);
  detail::read_le_array(in, out.rec.data.data(), out.rec.data.size());
  return out;
}

// ---------------------------------------------------------------------------
// splitting and batching
// ---------------------------------------------------------------------------
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified shuffle split: round(n_k * test_fraction) test samples per class.
inline DatasetSplit stratified_split(const std::vector<int>& labels, double test_fraction = 0.2,
                                     std::uint64_t seed = 42) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0)) {
    throw ConfigError("split: test_fraction must lie in (0, 1)");
  }
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw DataError("split: negative class label at index " + std::to_string(i));
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  DatasetSplit split;
  Rng rng(seed, "split");
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw DataError("split: class " + std::to_string(k) + " has fewer than 2 samples");
    }
    rng.shuffle(idx);
    std::size_t n_test = static_cast<std::size_t>(
        std::lround(static_cast<double>(idx.size()) * test_fraction));
    n_test = std::min(std::max<std::size_t>(n_test, 1), idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_test ? split.test : split.train).push_back(idx[i]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// Deterministic per-epoch batch order, keyed on (seed, epoch_index); the
// final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& indices,
                                                     std::size_t batch_size, std::uint64_t seed,
                                                     std::size_t epoch_index) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order = indices;
  Rng rng(seed, "batches.e" + std::to_string(epoch_index));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace diffe
