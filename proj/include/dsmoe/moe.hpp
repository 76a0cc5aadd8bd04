#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsmoe/random.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe {

struct MoEConfig {
  std::size_t num_shared = 1;  // N_s
  std::size_t num_routed = 16; // N_r
  std::size_t top_k = 2;       // K_r
  std::size_t hidden = 0;      // D
  std::size_t intermediate = 0;// S

  std::vector<std::string> violations() const;
};

// Gated FFN: down(silu(u·gate) ⊙ (u·up)). gate/up are [D,S], down is [S,D].
struct ExpertWeights {
  Tensor gate;
  Tensor up;
  Tensor down;

  static ExpertWeights init(std::size_t hidden, std::size_t intermediate, Rng& rng, double stddev = 0.02);
  static ExpertWeights zeros(std::size_t hidden, std::size_t intermediate);
};

struct RouterState {
  Tensor centroids;              // [N_r, D], trainable
  std::vector<double> biases;    // routing only, never touches gate values
  double bias_update_rate = 0.01;
  std::vector<std::uint64_t> window_load;

  static RouterState init(std::size_t num_routed, std::size_t hidden, Rng& rng, double stddev = 0.02);
  std::size_t num_routed() const { return biases.size(); }
  // Population standard deviation of the current window's per-expert loads.
  double window_load_std() const;
  void reset_window();
};

// s_i = sigmoid(u · e_i). u is [D] (returns [N_r]) or [N,D] (returns [N,N_r]).
Tensor affinity(const Tensor& u, const RouterState& router);

// Indices of the top_k largest s_i + b_i, ascending; ties go to the lower index.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const double> biases,
                                     std::size_t top_k);

// g_i = s_i / sum_{j in selected} s_j over the selected experts, in `selected` order.
std::vector<double> gate_values(std::span<const double> scores, std::span<const std::size_t> selected);

// u is [N,D] or [D].
Tensor expert_forward(const Tensor& u, const ExpertWeights& w);

struct MoELayer {
  MoEConfig config;
  std::vector<ExpertWeights> shared;
  std::vector<ExpertWeights> routed;
  RouterState router;

  static MoELayer init(const MoEConfig& config, Rng& rng, double stddev = 0.02);
};

struct MoEOutput {
  Tensor output;                                  // [N,D]
  std::vector<std::vector<std::size_t>> selected; // per token, ascending
};

// Shared plus gated routed expert contribution, without the residual.
MoEOutput moe_ffn(const Tensor& u, MoELayer& layer, bool record_load = true);

// h = u + moe_ffn(u). Load counters are incremented when record_load is set.
MoEOutput moe_forward(const Tensor& u, MoELayer& layer, bool record_load = true);

// Sign-of-deviation bias step against the window's mean load, then resets the
// window counters.
void update_bias(RouterState& router);

}  // namespace dsmoe
