#include "dsmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsmoe/init.hpp"

namespace dsmoe {

std::vector<std::string> MoEConfig::violations() const {
  std::vector<std::string> v;
  if (num_routed == 0) v.push_back("MoE needs at least one routed expert");
  if (top_k < 1 || top_k > num_routed) {
    v.push_back("activated experts A=" + std::to_string(top_k) + " must be in [1, E=" + std::to_string(num_routed) +
                "]");
  }
  if (num_shared > 1) v.push_back("shared expert count must be 0 or 1, got " + std::to_string(num_shared));
  if (hidden == 0 || intermediate == 0) v.push_back("MoE hidden and intermediate sizes must be positive");
  return v;
}

ExpertWeights ExpertWeights::init(std::size_t hidden, std::size_t intermediate, Rng& rng, double stddev) {
  return {trunc_normal({hidden, intermediate}, stddev, rng), trunc_normal({hidden, intermediate}, stddev, rng),
          trunc_normal({intermediate, hidden}, stddev, rng)};
}

ExpertWeights ExpertWeights::zeros(std::size_t hidden, std::size_t intermediate) {
  return {Tensor::zeros({hidden, intermediate}, true), Tensor::zeros({hidden, intermediate}, true),
          Tensor::zeros({intermediate, hidden}, true)};
}

RouterState RouterState::init(std::size_t num_routed, std::size_t hidden, Rng& rng, double stddev) {
  RouterState r;
  r.centroids = trunc_normal({num_routed, hidden}, stddev, rng);
  r.biases.assign(num_routed, 0.0);
  r.window_load.assign(num_routed, 0);
  return r;
}

double RouterState::window_load_std() const {
  if (window_load.empty()) return 0.0;
  const double n = static_cast<double>(window_load.size());
  double mu = 0.0;
  for (auto l : window_load) mu += static_cast<double>(l);
  mu /= n;
  double var = 0.0;
  for (auto l : window_load) var += (static_cast<double>(l) - mu) * (static_cast<double>(l) - mu);
  return std::sqrt(var / n);
}

void RouterState::reset_window() { std::fill(window_load.begin(), window_load.end(), 0); }

Tensor affinity(const Tensor& u, const RouterState& router) {
  const std::size_t d = router.centroids.dim(1);
  if (u.shape().back() != d || u.rank() > 2) {
    throw ShapeError("affinity: token " + shape_str(u.shape()) + " does not match centroids " +
                     shape_str(router.centroids.shape()));
  }
  if (u.rank() == 1) {
    Tensor s = sigmoid(matmul(reshape(u, {1, d}), transpose(router.centroids)));
    return reshape(s, {router.centroids.dim(0)});
  }
  return sigmoid(matmul(u, transpose(router.centroids)));
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const double> biases,
                                     std::size_t top_k) {
  if (scores.size() != biases.size()) throw ShapeError("select_topk: scores and biases differ in length");
  if (top_k < 1 || top_k > scores.size()) {
    throw std::invalid_argument("select_topk: K=" + std::to_string(top_k) + " outside [1, " +
                                std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(top_k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ka = scores[a] + biases[a];
                      const double kb = scores[b] + biases[b];
                      return ka > kb || (ka == kb && a < b);
                    });
  order.resize(top_k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> gate_values(std::span<const double> scores, std::span<const std::size_t> selected) {
  if (selected.empty()) throw std::invalid_argument("gate_values: empty selection");
  double z = 0.0;
  for (std::size_t i : selected) z += scores[i];
  std::vector<double> g;
  g.reserve(selected.size());
  for (std::size_t i : selected) g.push_back(scores[i] / z);
  return g;
}

Tensor expert_forward(const Tensor& u, const ExpertWeights& w) {
  if (u.rank() == 1) {
    const std::size_t d = u.dim(0);
    return reshape(expert_forward(reshape(u, {1, d}), w), {d});
  }
  if (u.rank() != 2 || u.dim(1) != w.gate.dim(0)) {
    throw ShapeError("expert_forward: input " + shape_str(u.shape()) + " does not match expert width " +
                     shape_str(w.gate.shape()));
  }
  return matmul(mul(silu(matmul(u, w.gate)), matmul(u, w.up)), w.down);
}

MoELayer MoELayer::init(const MoEConfig& config, Rng& rng, double stddev) {
  if (auto v = config.violations(); !v.empty()) throw std::invalid_argument("MoE config: " + v.front());
  MoELayer layer;
  layer.config = config;
  for (std::size_t i = 0; i < config.num_shared; ++i)
    layer.shared.push_back(ExpertWeights::init(config.hidden, config.intermediate, rng, stddev));
  for (std::size_t i = 0; i < config.num_routed; ++i)
    layer.routed.push_back(ExpertWeights::init(config.hidden, config.intermediate, rng, stddev));
  layer.router = RouterState::init(config.num_routed, config.hidden, rng, stddev);
  return layer;
}

MoEOutput moe_ffn(const Tensor& u, MoELayer& layer, bool record_load) {
  const MoEConfig& cfg = layer.config;
  if (layer.routed.size() != cfg.num_routed || layer.shared.size() != cfg.num_shared ||
      layer.router.num_routed() != cfg.num_routed) {
    throw std::invalid_argument("moe_forward: expert arrays do not match config");
  }
  if (u.rank() != 2 || u.dim(1) != cfg.hidden) {
    throw ShapeError("moe_forward: input " + shape_str(u.shape()) + " does not match hidden " +
                     std::to_string(cfg.hidden));
  }
  const std::size_t n = u.dim(0);
  const std::size_t nr = cfg.num_routed;

  Tensor scores = affinity(u, layer.router);  // [N, N_r]
  auto sv = scores.values();

  MoEOutput result;
  result.selected.resize(n);
  std::vector<double> mask(n * nr, 0.0);
  std::vector<std::vector<std::size_t>> tokens_of(nr);
  for (std::size_t t = 0; t < n; ++t) {
    result.selected[t] = select_topk(sv.subspan(t * nr, nr), layer.router.biases, cfg.top_k);
    for (std::size_t e : result.selected[t]) {
      mask[t * nr + e] = 1.0;
      tokens_of[e].push_back(t);
    }
  }
  if (record_load) {
    for (std::size_t e = 0; e < nr; ++e) layer.router.window_load[e] += tokens_of[e].size();
  }

  // Gates come from the raw scores only; the biases influenced nothing but the mask.
  Tensor masked = mul(scores, Tensor::from({n, nr}, std::move(mask)));
  Tensor gates = reshape(scale_rows(masked, reciprocal(sum_last(masked))), {n * nr, 1});

  Tensor out;
  for (const auto& w : layer.shared) {
    Tensor y = expert_forward(u, w);
    out = out.defined() ? add(out, y) : y;
  }
  for (std::size_t e = 0; e < nr; ++e) {
    const auto& rows = tokens_of[e];
    if (rows.empty()) continue;
    std::vector<std::size_t> gate_rows;
    gate_rows.reserve(rows.size());
    for (std::size_t t : rows) gate_rows.push_back(t * nr + e);
    Tensor g = reshape(index_select(gates, gate_rows), {rows.size()});
    Tensor y = scale_rows(expert_forward(index_select(u, rows), layer.routed[e]), g);
    Tensor placed = scatter_add(y, rows, n);
    out = out.defined() ? add(out, placed) : placed;
  }
  result.output = out;
  return result;
}

MoEOutput moe_forward(const Tensor& u, MoELayer& layer, bool record_load) {
  MoEOutput r = moe_ffn(u, layer, record_load);
  r.output = add(u, r.output);
  return r;
}

void update_bias(RouterState& router) {
  const std::size_t n = router.window_load.size();
  if (n == 0) return;
  double total = 0.0;
  for (auto l : router.window_load) total += static_cast<double>(l);
  const double mean_load = total / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double load = static_cast<double>(router.window_load[i]);
    if (load > mean_load) {
      router.biases[i] -= router.bias_update_rate;
    } else if (load < mean_load) {
      router.biases[i] += router.bias_update_rate;
    }
  }
  router.reset_window();
}

}  // namespace dsmoe
