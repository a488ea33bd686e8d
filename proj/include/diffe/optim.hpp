#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "diffe/tensor.hpp"

namespace diffe {

template <typename T>
struct RmsPropState {
  std::vector<T> accum;  // per-parameter squared-gradient accumulator
  T decay = T(0.99);
  T epsilon = T(1e-8);
};

// v <- decay*v + (1-decay)*g^2 ; param <- param - lr*g/(sqrt(v) + eps)
template <typename T>
void rmsprop_step(Tensor<T>& param, const std::vector<T>& grad, RmsPropState<T>& state, T lr,
                  std::size_t step_index = 0) {
  if (grad.size() != param.size()) {
    throw DimensionError("rmsprop_step: gradient size " + std::to_string(grad.size()) +
                         " does not match parameter size " + std::to_string(param.size()));
  }
  if (state.accum.empty()) state.accum.assign(param.size(), T(0));
  if (state.accum.size() != param.size()) {
    throw DimensionError("rmsprop_step: state size does not match parameter size");
  }
  T* p = param.data();
  T* v = state.accum.data();
  const T one_minus = T(1) - state.decay;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const T g = grad[i];
    if (!std::isfinite(static_cast<double>(g))) {
      throw TrainingError("non-finite gradient at optimizer step " + std::to_string(step_index));
    }
    v[i] = state.decay * v[i] + one_minus * g * g;
    p[i] -= lr * g / (std::sqrt(v[i]) + state.epsilon);
  }
}

// Steps a fixed list of parameters; tensors with no stored gradient are
// treated as zero-gradient (accumulator decays, value unchanged).
template <typename T>
class RmsProp {
 public:
  explicit RmsProp(std::vector<Tensor<T>> params, T decay = T(0.99), T epsilon = T(1e-8))
      : params_(std::move(params)) {
    states_.resize(params_.size());
    for (auto& s : states_) {
      s.decay = decay;
      s.epsilon = epsilon;
    }
  }

  void step(T lr) {
    ++step_count_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) {
        auto& v = states_[i].accum;
        if (!v.empty()) {
          for (auto& e : v) e *= states_[i].decay;
        }
        continue;
      }
      rmsprop_step(params_[i], params_[i].grad_storage(), states_[i], lr, step_count_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  std::size_t steps() const { return step_count_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<RmsPropState<T>> states_;
  std::size_t step_count_ = 0;
};

// Triangular cyclic learning rate: linear ramp base->max over step_size
// optimizer steps, then back, period 2*step_size.
struct CyclicLr {
  double base_lr = 9e-5;
  double max_lr = 1.5e-3;
  std::size_t step_size = 1;
};

inline double cyclic_lr(std::size_t step, const CyclicLr& sched) {
  if (sched.step_size == 0) throw ConfigError("cyclic_lr: step_size must be positive");
  if (sched.base_lr > sched.max_lr) throw ConfigError("cyclic_lr: base_lr must not exceed max_lr");
  const std::size_t period = 2 * sched.step_size;
  const std::size_t pos = step % period;
  const double frac = 1.0 - std::abs(static_cast<double>(pos) / static_cast<double>(sched.step_size) - 1.0);
  return sched.base_lr + (sched.max_lr - sched.base_lr) * frac;
}

}  // namespace diffe
