#pragma once

#include "dsmoe/random.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe {

// Trainable leaf drawn from N(0, stddev^2) truncated to +-2 stddev.
Tensor trunc_normal(Shape shape, double stddev, Rng& rng);

}  // namespace dsmoe
