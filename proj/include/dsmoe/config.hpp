#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsmoe/moe.hpp"
#include "dsmoe/rope_attention.hpp"

namespace dsmoe {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "S{N_s}E{N_r}A{K_r}", e.g. S1E16A2.
struct ExpertSpec {
  std::size_t shared = 0;
  std::size_t routed = 0;
  std::size_t active = 0;
  std::string str() const;
};

ExpertSpec parse_expert_spec(const std::string& spec);

enum class MoeParity { Even, Odd };

struct ModelConfig {
  std::string name = "custom";
  std::size_t blocks = 2;
  std::size_t hidden = 16;
  std::size_t intermediate = 32;        // routed/shared expert width S
  std::size_t dense_intermediate = 32;  // width of non-MoE FFN blocks
  std::size_t heads = 2;
  std::string expert_spec = "S1E4A2";
  bool interleave = true;
  MoeParity moe_parity = MoeParity::Even;
  PeMode pe_mode = PeMode::Rope2d;
  std::optional<std::size_t> gqa_kv_heads;
  std::size_t patch_size = 2;
  std::size_t in_channels = 3;
  std::size_t num_classes = 10;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t freq_dim = 256;
  double timestep_scale = 1000.0;
  double rope_base = 10000.0;

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t kv_heads() const { return gqa_kv_heads.value_or(heads); }
  std::size_t tokens() const { return grid_h * grid_w; }
  std::size_t image_h() const { return grid_h * patch_size; }
  std::size_t image_w() const { return grid_w * patch_size; }
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  bool is_moe_block(std::size_t block) const;
  std::size_t moe_block_count() const;
  ExpertSpec experts() const { return parse_expert_spec(expert_spec); }
  MoEConfig moe_config() const;
  AttentionConfig attention_config() const;
};

// Every violation found, worded for humans; empty means the config is usable.
std::vector<std::string> validate_config(const ModelConfig& config);

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t activated = 0;
};

ParamCount count_parameters(const ModelConfig& config);

enum class Ablation { S0A3, NoInterleave, Gqa };
Ablation parse_ablation(const std::string& text);
// s0a3: drop the shared expert, activate one more routed expert.
// no-interleave: MoE in every block. gqa: half as many kv heads.
void apply_ablation(ModelConfig& config, Ablation ablation);

}  // namespace dsmoe
