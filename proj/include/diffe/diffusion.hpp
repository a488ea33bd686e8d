#pragma once

#include <utility>
#include <vector>

#include "diffe/ops.hpp"
#include "diffe/tensor.hpp"

namespace diffe {

// Beta/alpha/alpha-bar tables for the forward process. Tables are indexed by
// t-1 (t runs 1..T); alpha_bar_at(0) == 1 so t=0 means "uncorrupted".
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
};

inline NoiseSchedule make_schedule(std::size_t steps = 1000, double beta_start = 1e-4,
                                   double beta_end = 0.02) {
  if (steps < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double b = steps == 1
                         ? beta_start
                         : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                            static_cast<double>(steps - 1);
    s.beta[i] = b;
    s.alpha[i] = 1.0 - b;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

template <typename T>
struct DiffusionSample {
  Tensor<T> x_t;
  std::size_t t = 0;
  Tensor<T> eps;
};

namespace detail {
inline void check_t(std::size_t t, const NoiseSchedule& sched, const char* op) {
  if (t < 1 || t > sched.steps) {
    throw ConfigError(std::string(op) + ": timestep " + std::to_string(t) + " outside [1, " +
                      std::to_string(sched.steps) + "]");
  }
}
}  // namespace detail

// One forward kernel application: sqrt(1-beta_t)*x_prev + sqrt(beta_t)*eps.
template <typename T>
Tensor<T> q_step(const Tensor<T>& x_prev, std::size_t t, const NoiseSchedule& sched, Rng& rng) {
  detail::check_t(t, sched, "q_step");
  const double keep = std::sqrt(1.0 - sched.beta_at(t));
  const double noise = std::sqrt(sched.beta_at(t));
  Tensor<T> out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(keep * static_cast<double>(x_prev[i]) + noise * rng.normal());
  }
  return out;
}

// Closed-form jump to stage t: x_t = sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.
template <typename T>
DiffusionSample<T> q_sample(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps,
                            const NoiseSchedule& sched) {
  detail::check_t(t, sched, "q_sample");
  if (eps.shape() != x0.shape()) {
    throw DimensionError("q_sample: eps shape " + shape_str(eps.shape()) + " does not match x0 " +
                         shape_str(x0.shape()));
  }
  const double ab = sched.alpha_bar_at(t);
  const double keep = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  DiffusionSample<T> s;
  s.t = t;
  s.eps = eps;
  s.x_t = Tensor<T>(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.x_t[i] = static_cast<T>(keep * static_cast<double>(x0[i]) + noise * static_cast<double>(eps[i]));
  }
  return s;
}

inline std::vector<std::size_t> sample_timesteps(std::size_t batch, std::size_t steps, Rng& rng) {
  if (batch < 1 || steps < 1) throw ConfigError("sample_timesteps: batch and T must be >= 1");
  std::vector<std::size_t> t(batch);
  for (auto& v : t) v = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(steps)));
  return t;
}

// Corruption table for one signal: column j holds x_{t_j} drawn from the
// closed form (t = 0 reproduces the input, alpha_bar_0 = 1).
template <typename T>
std::vector<std::vector<T>> diffusion_demo_table(const std::vector<T>& x0,
                                                 const std::vector<std::size_t>& ts,
                                                 const NoiseSchedule& sched, Rng& rng) {
  std::vector<std::vector<T>> columns;
  Tensor<T> x = Tensor<T>::from({x0.size()}, x0);
  for (std::size_t t : ts) {
    if (t == 0) {
      columns.push_back(x0);
      continue;
    }
    Tensor<T> eps(x.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<T>(rng.normal());
    columns.push_back(q_sample(x, t, eps, sched).x_t.values());
  }
  return columns;
}

template <typename T>
double pearson_correlation(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError("pearson_correlation: length mismatch");
  }
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += static_cast<double>(a[i]);
    mb += static_cast<double>(b[i]);
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = static_cast<double>(a[i]) - ma;
    const double db = static_cast<double>(b[i]) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Reconstruction objective: scalar mean|x0 - x_hat| (drives the denoiser) and
// the detached elementwise error map consumed as the decoder's target.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> ddpm_loss(const Tensor<T>& x0, const Tensor<T>& x_hat,
                                          Tape<T>* tape = nullptr) {
  if (x0.shape() != x_hat.shape()) {
    throw DimensionError("ddpm_loss: shape mismatch " + shape_str(x0.shape()) + " vs " +
                         shape_str(x_hat.shape()));
  }
  Tensor<T> scalar = l1_loss(x_hat, x0, Reduce::Mean, tape);
  Tensor<T> error_map(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) error_map[i] = std::abs(x0[i] - x_hat[i]);
  return {scalar, error_map};
}

}  // namespace diffe
