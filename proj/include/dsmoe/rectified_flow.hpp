#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsmoe/random.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe {

// Rectified-flow interpolation: alpha_t = 1 - t, sigma_t = t.
struct NoiseSchedule {
  static double alpha(double t) { return 1.0 - t; }
  static double sigma(double t) { return t; }
};

struct TimeSampler {
  enum class Mode { Uniform, LogitNormal };
  Mode mode = Mode::Uniform;
  double mu = -0.8;
  double sigma = 0.8;

  static TimeSampler uniform() { return {}; }
  static TimeSampler logit_normal(double mu = -0.8, double sigma = 0.8) { return {Mode::LogitNormal, mu, sigma}; }

  // Always strictly inside (0, 1).
  double sample(Rng& rng) const;
};

std::string to_string(TimeSampler::Mode mode);

enum class Solver { Euler, Heun };
Solver parse_solver(const std::string& text);
std::string to_string(Solver solver);

struct SamplerConfig {
  Solver solver = Solver::Heun;
  std::size_t steps = 50;
  double cfg_scale = 1.0;
  std::optional<std::pair<double, double>> cfg_interval;  // on t, inclusive
  double noise_scale = 1.0;

  std::vector<std::string> violations() const;
  bool guidance_active(double t) const;
};

// x_t = (1-t) x0 + t eps
Tensor forward_noise(const Tensor& x0, const Tensor& eps, double t);
// eps - x0
Tensor rf_target(const Tensor& x0, const Tensor& eps);

// Batched predictor: (x_t [B,...], t [B], labels [B]) -> velocity [B,...].
using Predictor = std::function<Tensor(const Tensor& x_t, std::span<const double> t, std::span<const int> labels)>;

struct RfLossOptions {
  TimeSampler time_sampler;
  double label_drop = 0.1;
  int null_label = 0;
  double noise_scale = 1.0;
};

struct RfLossResult {
  Tensor loss;                // scalar
  std::vector<double> t;      // per batch item
  std::vector<int> labels;    // after label drop
};

// Mean squared error between predictor(x_t, t, c) and eps - x0 over the batch.
// Draw order from rng: t for every item, then the drop decision for every
// item, then eps elementwise.
RfLossResult rf_loss(const Predictor& predictor, const Tensor& x0, std::span<const int> labels,
                     const RfLossOptions& options, Rng& rng);

// Integrates dx/dt = v from t=1 to t=0 over a linear grid starting at `noise`.
// With guidance, v = v_uncond + scale (v_cond - v_uncond) at evaluations whose
// t lies inside the interval (everywhere when no interval is set).
Tensor sample(const Predictor& predictor, const Tensor& noise, std::span<const int> labels, int null_label,
              const SamplerConfig& config);

// Draws noise * noise_scale of the given shape and calls sample().
Tensor sample(const Predictor& predictor, const Shape& shape, std::span<const int> labels, int null_label,
              const SamplerConfig& config, Rng& rng);

}  // namespace dsmoe
