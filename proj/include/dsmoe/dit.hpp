#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsmoe/config.hpp"
#include "dsmoe/moe.hpp"
#include "dsmoe/rope_attention.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe {

// [C,H,W] -> [T, p*p*C] or [B,C,H,W] -> [B,T,p*p*C]. Tokens are row-major
// over the patch grid; features are ordered (patch row, patch col, channel).
Tensor patchify(const Tensor& images, std::size_t patch);
// Inverse of patchify: [T,p*p*C] -> [C,H,W] or [B,T,p*p*C] -> [B,C,H,W].
Tensor unpatchify(const Tensor& tokens, std::size_t channels, std::size_t grid_h, std::size_t grid_w,
                  std::size_t patch);

// [N] timesteps -> [N, dim] as [cos(t*f_i) ..., sin(t*f_i) ...], f_i = 10000^(-i/(dim/2)).
Tensor timestep_embedding(std::span<const double> t, std::size_t dim);

// Fixed 2D sin-cos table [grid_h*grid_w, dim], used to initialise the APE table.
std::vector<double> sincos_2d_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined

  Tensor operator()(const Tensor& x) const;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Routing decisions of one MoE layer during one forward pass; row b*T+t of
// `selected` is token t of batch item b.
struct LayerRouting {
  std::size_t block = 0;
  std::size_t moe_layer = 0;
  std::vector<std::vector<std::size_t>> selected;
};

struct ModelOutput {
  Tensor prediction;  // same shape as the input images
  std::vector<LayerRouting> routing;
};

class DiTModel {
 public:
  DiTModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // images: [B,C,H,W] noisy inputs; t in [0,1]; labels in [0, num_classes]
  // where num_classes is the null (unconditional) class. Load counters of the
  // routers advance only when `record_load` is set.
  ModelOutput forward(const Tensor& images, std::span<const double> t, std::span<const int> labels,
                      bool record_load = false);

  // Trainable tensors in canonical order.
  std::vector<NamedParam> parameters() const;
  std::vector<MoELayer*> moe_layers();
  std::vector<const MoELayer*> moe_layers() const;

  // Non-trainable state that still belongs in a checkpoint (router biases).
  std::vector<std::pair<std::string, std::vector<double>*>> routing_state();
  std::vector<std::pair<std::string, const std::vector<double>*>> routing_state() const;

  std::uint64_t parameter_count() const;

 private:
  struct Block {
    Linear ada;
    Linear q, k, v, o;
    bool moe = false;
    // dense path
    Tensor ffn_gate, ffn_up, ffn_down;
    // sparse path
    MoELayer experts;
  };

  Tensor attention_sublayer(const Block& blk, const Tensor& x) const;

  ModelConfig config_;
  AttentionConfig attn_;
  std::optional<RotaryTable> rope_;
  std::vector<GridPos> positions_;
  Linear x_embed_;
  Tensor pos_embed_;  // APE only
  Linear t_mlp0_, t_mlp1_;
  Tensor y_table_;
  std::vector<Block> blocks_;
  Linear final_ada_, final_head_;
};

}  // namespace dsmoe
