#include "dsmoe/init.hpp"

#include <cmath>

namespace dsmoe {

Tensor trunc_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    x = z * stddev;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace dsmoe
