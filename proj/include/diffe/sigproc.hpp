#pragma once

#include <algorithm>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

#include "diffe/common.hpp"

namespace diffe {

// Continuous multichannel recording, channels x samples, row-major.
struct Recording {
  std::vector<float> data;
  std::size_t channels = 0;
  std::size_t samples = 0;
  double fs = 0.0;

  static Recording zeros(std::size_t channels, std::size_t samples, double fs) {
    Recording r;
    r.channels = channels;
    r.samples = samples;
    r.fs = fs;
    r.data.assign(channels * samples, 0.0f);
    return r;
  }

  float* row(std::size_t c) { return data.data() + c * samples; }
  const float* row(std::size_t c) const { return data.data() + c * samples; }
};

struct Event {
  std::size_t sample = 0;
  int label = 0;
};
using EventList = std::vector<Event>;

// Epoched trials, trials x channels x samples.
struct EpochSet {
  std::vector<float> data;
  std::size_t trials = 0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  double fs = 0.0;
  std::vector<int> labels;

  float* trial(std::size_t i) { return data.data() + i * channels * samples; }
  const float* trial(std::size_t i) const { return data.data() + i * channels * samples; }
  std::size_t trial_len() const { return channels * samples; }
};

// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

namespace detail {

// Order-n analog Butterworth lowpass prototype poles (cutoff 1 rad/s).
inline std::vector<std::complex<double>> butter_prototype_poles(int order) {
  std::vector<std::complex<double>> poles;
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * (2.0 * k + 1.0) / (2.0 * order) + pi / 2.0;
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

inline std::complex<double> bilinear_map(std::complex<double> s, double fs2) {
  return (fs2 + s) / (fs2 - s);
}

// Butterworth bandpass of the given prototype order (2*order poles), designed
// in the analog domain with prewarped edges and mapped by the bilinear
// transform. Returned as `order` biquads.
inline std::vector<Biquad> butter_bandpass_sos(int order, double low_hz, double high_hz, double fs) {
  const double pi = 3.14159265358979323846;
  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(pi * low_hz / fs);
  const double w2 = fs2 * std::tan(pi * high_hz / fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // lowpass prototype -> bandpass: 2*order poles, `order` zeros at s = 0
  std::vector<std::complex<double>> apoles;
  for (const auto& p : butter_prototype_poles(order)) {
    const std::complex<double> pb = p * bw;
    const std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0 * w0);
    apoles.push_back((pb + disc) / 2.0);
    apoles.push_back((pb - disc) / 2.0);
  }
  double gain = std::pow(bw, order);

  // bilinear transform
  std::vector<std::complex<double>> zpoles, zzeros;
  std::complex<double> num(1.0, 0.0), den(1.0, 0.0);
  for (const auto& p : apoles) {
    zpoles.push_back(bilinear_map(p, fs2));
    den *= (fs2 - p);
  }
  for (int i = 0; i < order; ++i) {
    zzeros.emplace_back(1.0, 0.0);   // analog zeros at s = 0 land on z = 1
    zzeros.emplace_back(-1.0, 0.0);  // degree deficit adds zeros at z = -1
    num *= fs2;                      // (fs2 - 0) per analog zero
  }
  gain *= (num / den).real();

  // pair conjugate poles; each section takes one zero at +1 and one at -1
  std::vector<std::complex<double>> upper;
  for (const auto& p : zpoles) {
    if (p.imag() > 0.0) upper.push_back(p);
  }
  std::vector<Biquad> sos;
  const double g_sec = std::pow(std::abs(gain), 1.0 / static_cast<double>(order));
  const double g_sign = gain < 0.0 ? -1.0 : 1.0;
  for (std::size_t i = 0; i < upper.size(); ++i) {
    Biquad s;
    const double sec_gain = g_sec * (i == 0 ? g_sign : 1.0);
    s.b0 = sec_gain;
    s.b1 = 0.0;
    s.b2 = -sec_gain;  // zeros at z = +1 and z = -1: (1 - z^-2)
    s.a1 = -2.0 * upper[i].real();
    s.a2 = std::norm(upper[i]);
    sos.push_back(s);
  }
  return sos;
}

// RBJ-cookbook notch.
inline Biquad notch_sos(double f0_hz, double q, double fs) {
  const double pi = 3.14159265358979323846;
  const double w0 = 2.0 * pi * f0_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

// Direct-form II transposed, with the initial state matched to a step of the
// first input value so steady-state signals produce no start-up transient.
inline void sosfilt_zi(const std::vector<Biquad>& sos, double* x, std::size_t n) {
  for (const auto& s : sos) {
    const double u = n > 0 ? x[0] : 0.0;
    const double dc_den = 1.0 + s.a1 + s.a2;
    const double y_ss = dc_den != 0.0 ? u * (s.b0 + s.b1 + s.b2) / dc_den : 0.0;
    double s1 = (s.b1 + s.b2) * u - (s.a1 + s.a2) * y_ss;
    double s2 = s.b2 * u - s.a2 * y_ss;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x[i];
      const double yi = s.b0 * xi + s1;
      s1 = s.b1 * xi - s.a1 * yi + s2;
      s2 = s.b2 * xi - s.a2 * yi;
      x[i] = yi;
    }
  }
}

// Forward-backward (zero-phase) filtering with odd-reflection padding.
inline void sosfiltfilt(const std::vector<Biquad>& sos, double* x, std::size_t n,
                        std::size_t padlen) {
  if (n == 0) return;
  padlen = std::min(padlen, n - 1);
  std::vector<double> buf(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) buf[i] = 2.0 * x[0] - x[padlen - i];
  for (std::size_t i = 0; i < n; ++i) buf[padlen + i] = x[i];
  for (std::size_t i = 0; i < padlen; ++i) buf[padlen + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  sosfilt_zi(sos, buf.data(), buf.size());
  std::reverse(buf.begin(), buf.end());
  sosfilt_zi(sos, buf.data(), buf.size());
  std::reverse(buf.begin(), buf.end());
  for (std::size_t i = 0; i < n; ++i) x[i] = buf[padlen + i];
}

inline void apply_sos(Recording& rec, const std::vector<Biquad>& sos) {
  const std::size_t padlen = std::max<std::size_t>(
      3 * (2 * sos.size() + 1), static_cast<std::size_t>(std::lround(rec.fs)));
  std::vector<double> row(rec.samples);
  for (std::size_t c = 0; c < rec.channels; ++c) {
    float* src = rec.row(c);
    for (std::size_t i = 0; i < rec.samples; ++i) row[i] = static_cast<double>(src[i]);
    sosfiltfilt(sos, row.data(), rec.samples, padlen);
    for (std::size_t i = 0; i < rec.samples; ++i) src[i] = static_cast<float>(row[i]);
  }
}

}  // namespace detail

// Zero-phase Butterworth band-pass (4th-order design, applied forward and
// backward).
inline Recording bandpass(Recording rec, double low_hz, double high_hz) {
  const double limit = 0.95 * (rec.fs / 2.0);
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz <= limit)) {
    throw ConfigError("bandpass: edges (" + std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                      ") Hz must satisfy 0 < low < high <= 0.95*Nyquist = " + std::to_string(limit) +
                      " Hz at fs = " + std::to_string(rec.fs));
  }
  const auto sos = detail::butter_bandpass_sos(4, low_hz, high_hz, rec.fs);
  detail::apply_sos(rec, sos);
  return rec;
}

// Zero-phase second-order notch per frequency, quality factor q.
inline Recording notch(Recording rec, const std::vector<double>& freqs_hz, double q = 30.0) {
  std::vector<Biquad> sos;
  for (double f : freqs_hz) {
    if (!(f > 0.0) || !(f < rec.fs / 2.0)) {
      throw ConfigError("notch: frequency " + std::to_string(f) + " Hz must lie below Nyquist " +
                        std::to_string(rec.fs / 2.0) + " Hz");
    }
    sos.push_back(detail::notch_sos(f, q, rec.fs));
  }
  if (!sos.empty()) detail::apply_sos(rec, sos);
  return rec;
}

// Common average reference: subtract the across-channel mean at every sample.
inline Recording car(Recording rec) {
  if (rec.channels == 0) throw DataError("car: recording has no channels");
  constexpr std::size_t kBlock = 8192;
  std::vector<double> mean(kBlock);
  for (std::size_t start = 0; start < rec.samples; start += kBlock) {
    const std::size_t len = std::min(kBlock, rec.samples - start);
    std::fill(mean.begin(), mean.begin() + len, 0.0);
    for (std::size_t c = 0; c < rec.channels; ++c) {
      const float* r = rec.row(c) + start;
      for (std::size_t i = 0; i < len; ++i) mean[i] += static_cast<double>(r[i]);
    }
    const double inv = 1.0 / static_cast<double>(rec.channels);
    for (std::size_t i = 0; i < len; ++i) mean[i] *= inv;
    for (std::size_t c = 0; c < rec.channels; ++c) {
      float* r = rec.row(c) + start;
      for (std::size_t i = 0; i < len; ++i) {
        r[i] = static_cast<float>(static_cast<double>(r[i]) - mean[i]);
      }
    }
  }
  return rec;
}

// Band selection for classification: 70 Hz up to 125 Hz, clamped to
// 0.95*Nyquist when the sampling rate cannot carry 125 Hz.
inline Recording high_gamma(Recording rec) {
  if (!(rec.fs / 2.0 > 70.0)) {
    throw ConfigError("high_gamma: sampling rate " + std::to_string(rec.fs) +
                      " Hz is too low for a 70 Hz band edge");
  }
  double high = 125.0;
  const double limit = 0.95 * (rec.fs / 2.0);
  if (high > limit) {
    std::fprintf(stderr, "[diffe] high_gamma: clamping upper edge from 125 to %.2f Hz (fs = %.1f)\n",
                 limit, rec.fs);
    high = limit;
  }
  return bandpass(std::move(rec), 70.0, high);
}

// Cut 2 s trials at each event and subtract the per-channel mean of the
// 0.5 s window before the event.
inline EpochSet epoch_and_baseline(const Recording& rec, const EventList& events,
                                   double epoch_s = 2.0, double baseline_s = 0.5) {
  const std::size_t n_epoch = static_cast<std::size_t>(std::lround(epoch_s * rec.fs));
  const std::size_t n_base = static_cast<std::size_t>(std::lround(baseline_s * rec.fs));
  EpochSet out;
  out.trials = events.size();
  out.channels = rec.channels;
  out.samples = n_epoch;
  out.fs = rec.fs;
  out.labels.resize(events.size());
  out.data.resize(events.size() * rec.channels * n_epoch);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    if (i > 0 && ev.sample <= prev) {
      throw DataError("event " + std::to_string(i) + " is not after its predecessor");
    }
    prev = ev.sample;
    if (ev.sample < n_base) {
      throw DataError("event " + std::to_string(i) + " at sample " + std::to_string(ev.sample) +
                      " leaves no room for the " + std::to_string(n_base) + "-sample baseline");
    }
    if (ev.sample + n_epoch > rec.samples) {
      throw DataError("event " + std::to_string(i) + " at sample " + std::to_string(ev.sample) +
                      " leaves no room for the " + std::to_string(n_epoch) + "-sample epoch");
    }
    out.labels[i] = ev.label;
    for (std::size_t c = 0; c < rec.channels; ++c) {
      const float* src = rec.row(c);
      double base = 0.0;
      for (std::size_t j = ev.sample - n_base; j < ev.sample; ++j) {
        base += static_cast<double>(src[j]);
      }
      base /= static_cast<double>(n_base);
      float* dst = out.data.data() + (i * rec.channels + c) * n_epoch;
      for (std::size_t j = 0; j < n_epoch; ++j) {
        dst[j] = static_cast<float>(static_cast<double>(src[ev.sample + j]) - base);
      }
    }
  }
  return out;
}

struct PreprocessConfig {
  double band_low = 0.5;
  double band_high = 125.0;
  std::vector<double> notch_freqs{60.0, 120.0};
  double notch_q = 30.0;
  double gamma_low = 70.0;
  double epoch_s = 2.0;
  double baseline_s = 0.5;
};

// Fixed chain: band-pass -> notch -> CAR -> high-gamma -> epoch + baseline.
inline EpochSet preprocess(Recording rec, const EventList& events, const PreprocessConfig& cfg) {
  rec = bandpass(std::move(rec), cfg.band_low, cfg.band_high);
  rec = notch(std::move(rec), cfg.notch_freqs, cfg.notch_q);
  rec = car(std::move(rec));
  rec = high_gamma(std::move(rec));
  return epoch_and_baseline(rec, events, cfg.epoch_s, cfg.baseline_s);
}

// 10-10 montage naming for the default 64-channel cap; other channel counts
// fall back to ch001-style names.
inline std::vector<std::string> standard_channel_names(std::size_t n) {
  static const char* k64[] = {
      "Fp1", "Fp2", "F7",  "F3",  "Fz",  "F4",  "F8",  "FC5", "FC1", "FC2", "FC6", "T7",  "C3",
      "Cz",  "C4",  "T8",  "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3",  "Pz",  "P4",
      "P8",  "PO9", "O1",  "Oz",  "O2",  "PO10", "AF7", "AF3", "AF4", "AF8", "F5",  "F1",  "F2",
      "F6",  "FT9", "FT7", "FC3", "FC4", "FT8", "FT10", "C5", "C1",  "C2",  "C6",  "TP7", "CP3",
      "CPz", "CP4", "TP8", "P5",  "P1",  "P2",  "P6",  "PO7", "PO3", "POz", "PO4", "PO8"};
  std::vector<std::string> names;
  if (n == 64) {
    names.assign(std::begin(k64), std::end(k64));
  } else {
    char buf[16];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "ch%03zu", i + 1);
      names.emplace_back(buf);
    }
  }
  return names;
}

}  // namespace diffe
