#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "diffe/tensor.hpp"

namespace diffe::testing {

// Central finite differences against the recorded gradient, 64-bit. The
// callable must rebuild the scalar from the same leaf tensors each call;
// passing a null tape gives the plain forward evaluation.
inline double gradcheck(const std::function<Tensor<double>(Tape<double>*)>& f,
                        std::vector<Tensor<double>> leaves, double h = 1e-4,
                        std::size_t max_coords_per_leaf = 0) {
  for (auto& leaf : leaves) leaf.clear_grad();
  Tape<double> tape;
  Tensor<double> out = f(&tape);
  backward(out, tape);
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    analytic.emplace_back(leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                          : std::vector<double>(leaf.size(), 0.0));
  }
  double worst = 0.0;
  Rng pick(1234567);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    if (!leaf.requires_grad()) continue;
    std::vector<std::size_t> coords(leaf.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_leaf > 0 && coords.size() > max_coords_per_leaf) {
      pick.shuffle(coords);
      coords.resize(max_coords_per_leaf);
    }
    for (std::size_t i : coords) {
      const double x0 = leaf[i];
      leaf[i] = x0 + h;
      const double fp = f(nullptr)[0];
      leaf[i] = x0 - h;
      const double fm = f(nullptr)[0];
      leaf[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      const double rel = std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(a), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace diffe::testing
