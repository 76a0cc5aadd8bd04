#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dsmoe/random.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe::testing {

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -2.0, double hi = 2.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), random_values(n, rng, lo, hi), requires_grad);
}

// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of a scalar function of one leaf coordinate.
inline double central_difference(const std::function<double()>& f, Tensor& leaf, std::size_t index,
                                 double h = 1e-5) {
  auto v = leaf.mutable_values();
  const double saved = v[index];
  v[index] = saved + h;
  const double up = f();
  v[index] = saved - h;
  const double down = f();
  v[index] = saved;
  return (up - down) / (2.0 * h);
}

// Largest relative error between backward() and central differences over
// every coordinate of every leaf.
inline double max_grad_error(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    auto g = l.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  auto f = [&] { return loss().item(); };
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t k = 0; k < leaves[i].numel(); ++k) {
      worst = std::max(worst, rel_error(analytic[i][k], central_difference(f, leaves[i], k, h)));
    }
  }
  return worst;
}

// Weighted sum with fixed pseudo-random weights so every output element
// contributes a distinct gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, Tensor::from(y.shape(), random_values(y.numel(), rng, -1.0, 1.0))));
}

}  // namespace dsmoe::testing
