#include "dsmoe/rectified_flow.hpp"

#include <cmath>
#include <limits>

namespace dsmoe {

double TimeSampler::sample(Rng& rng) const {
  double t = 0.0;
  if (mode == Mode::Uniform) {
    t = rng.uniform();
  } else {
    const double z = mu + sigma * rng.normal();
    t = 1.0 / (1.0 + std::exp(-z));
  }
  if (t <= 0.0) t = std::numeric_limits<double>::min();
  if (t >= 1.0) t = std::nextafter(1.0, 0.0);
  return t;
}

std::string to_string(TimeSampler::Mode mode) {
  return mode == TimeSampler::Mode::Uniform ? "uniform" : "logit-normal";
}

Solver parse_solver(const std::string& text) {
  if (text == "euler") return Solver::Euler;
  if (text == "heun") return Solver::Heun;
  throw std::invalid_argument("unknown solver '" + text + "' (expected euler|heun)");
}

std::string to_string(Solver solver) { return solver == Solver::Euler ? "euler" : "heun"; }

std::vector<std::string> SamplerConfig::violations() const {
  std::vector<std::string> v;
  if (steps < 1) v.push_back("ODE steps must be at least 1");
  if (!(cfg_scale >= 1.0)) v.push_back("cfg scale must be >= 1");
  if (cfg_interval) {
    const auto [lo, hi] = *cfg_interval;
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) v.push_back("cfg interval must satisfy 0 <= lo < hi <= 1");
  }
  if (!(noise_scale > 0.0)) v.push_back("noise scale must be positive");
  return v;
}

bool SamplerConfig::guidance_active(double t) const {
  if (cfg_scale == 1.0) return false;
  if (!cfg_interval) return true;
  return t >= cfg_interval->first && t <= cfg_interval->second;
}

Tensor forward_noise(const Tensor& x0, const Tensor& eps, double t) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("forward_noise: t outside [0,1]");
  return add(scale(x0, NoiseSchedule::alpha(t)), scale(eps, NoiseSchedule::sigma(t)));
}

Tensor rf_target(const Tensor& x0, const Tensor& eps) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("rf_target: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  return sub(eps, x0);
}

RfLossResult rf_loss(const Predictor& predictor, const Tensor& x0, std::span<const int> labels,
                     const RfLossOptions& options, Rng& rng) {
  if (x0.rank() < 2 || x0.dim(0) != labels.size()) {
    throw ShapeError("rf_loss: batch " + shape_str(x0.shape()) + " with " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t b = x0.dim(0);
  const std::size_t per = x0.numel() / b;
  RfLossResult r;
  r.t.resize(b);
  for (auto& t : r.t) t = options.time_sampler.sample(rng);
  r.labels.assign(labels.begin(), labels.end());
  for (auto& c : r.labels)
    if (rng.bernoulli(options.label_drop)) c = options.null_label;

  auto xv = x0.values();
  std::vector<double> eps(x0.numel());
  for (auto& e : eps) e = rng.normal() * options.noise_scale;
  std::vector<double> xt(x0.numel());
  std::vector<double> target(x0.numel());
  for (std::size_t i = 0; i < b; ++i) {
    const double t = r.t[i];
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t k = i * per + j;
      xt[k] = NoiseSchedule::alpha(t) * xv[k] + NoiseSchedule::sigma(t) * eps[k];
      target[k] = eps[k] - xv[k];
    }
  }
  Tensor pred = predictor(Tensor::from(x0.shape(), std::move(xt)), r.t, r.labels);
  if (pred.shape() != x0.shape()) {
    throw ShapeError("rf_loss: prediction " + shape_str(pred.shape()) + " vs batch " + shape_str(x0.shape()));
  }
  r.loss = mean(square(sub(pred, Tensor::from(x0.shape(), std::move(target)))));
  return r;
}

namespace {

std::vector<double> velocity(const Predictor& predictor, const Tensor& x, double t, std::span<const int> labels,
                             int null_label, const SamplerConfig& cfg) {
  const std::size_t b = x.dim(0);
  std::vector<double> ts(b, t);
  Tensor cond = predictor(x, ts, labels);
  auto cv = cond.values();
  std::vector<double> v(cv.begin(), cv.end());
  if (!cfg.guidance_active(t)) return v;
  std::vector<int> null_labels(b, null_label);
  Tensor uncond = predictor(x, ts, null_labels);
  auto uv = uncond.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = uv[i] + cfg.cfg_scale * (v[i] - uv[i]);
  return v;
}

}  // namespace

Tensor sample(const Predictor& predictor, const Tensor& noise, std::span<const int> labels, int null_label,
              const SamplerConfig& config) {
  if (auto v = config.violations(); !v.empty()) throw std::invalid_argument("sampler config: " + v.front());
  if (noise.rank() < 1 || noise.dim(0) != labels.size()) {
    throw ShapeError("sample: noise " + shape_str(noise.shape()) + " with " + std::to_string(labels.size()) +
                     " labels");
  }
  const Shape shape = noise.shape();
  auto nv = noise.values();
  std::vector<double> x(nv.begin(), nv.end());
  const std::size_t n = config.steps;
  for (std::size_t i = 0; i < n; ++i) {
    // (n-i)/n rather than 1 - i/n so grid points land exactly on k/n
    const double t_cur = static_cast<double>(n - i) / static_cast<double>(n);
    const double t_next = static_cast<double>(n - i - 1) / static_cast<double>(n);
    const double dt = t_cur - t_next;
    const auto d1 = velocity(predictor, Tensor::from(shape, x), t_cur, labels, null_label, config);
    if (config.solver == Solver::Euler) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] -= dt * d1[k];
      continue;
    }
    std::vector<double> pred(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) pred[k] = x[k] - dt * d1[k];
    const auto d2 = velocity(predictor, Tensor::from(shape, std::move(pred)), t_next, labels, null_label, config);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= dt * 0.5 * (d1[k] + d2[k]);
  }
  return Tensor::from(shape, std::move(x));
}

Tensor sample(const Predictor& predictor, const Shape& shape, std::span<const int> labels, int null_label,
              const SamplerConfig& config, Rng& rng) {
  std::vector<double> noise(shape_numel(shape));
  for (auto& e : noise) e = rng.normal() * config.noise_scale;
  return sample(predictor, Tensor::from(shape, std::move(noise)), labels, null_label, config);
}

}  // namespace dsmoe
