#include "dsmoe/dit.hpp"

#include <cmath>

#include "dsmoe/init.hpp"

namespace dsmoe {

namespace {

constexpr double kInitStd = 0.02;

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool zero = false) {
  Linear l;
  l.weight = zero ? Tensor::zeros({in, out}, true) : trunc_normal({in, out}, kInitStd, rng);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale_v) {
  const std::size_t t = x.dim(1);
  return add(mul(x, add_scalar(expand_tokens(scale_v, t), 1.0)), expand_tokens(shift, t));
}

Tensor plain_layernorm(const Tensor& x) { return layernorm(x, Tensor{}, Tensor{}, 1e-6); }

}  // namespace

Tensor patchify(const Tensor& images, std::size_t patch) {
  const bool single = images.rank() == 3;
  if (!single && images.rank() != 4) {
    throw ShapeError("patchify: expected [C,H,W] or [B,C,H,W], got " + shape_str(images.shape()));
  }
  const Shape& s = images.shape();
  const std::size_t b = single ? 1 : s[0];
  const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                     std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor x = reshape(images, {b, c, gh, patch, gw, patch});
  x = permute(x, {0, 2, 4, 3, 5, 1});
  if (single) return reshape(x, {gh * gw, patch * patch * c});
  return reshape(x, {b, gh * gw, patch * patch * c});
}

Tensor unpatchify(const Tensor& tokens, std::size_t channels, std::size_t grid_h, std::size_t grid_w,
                  std::size_t patch) {
  const bool single = tokens.rank() == 2;
  const std::size_t b = single ? 1 : tokens.dim(0);
  const std::size_t want = patch * patch * channels;
  if ((!single && tokens.rank() != 3) || tokens.shape()[tokens.rank() - 2] != grid_h * grid_w ||
      tokens.shape().back() != want) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " with patch dim " +
                     std::to_string(want));
  }
  Tensor x = reshape(tokens, {b, grid_h, grid_w, patch, patch, channels});
  x = permute(x, {0, 5, 1, 3, 2, 4});
  if (single) return reshape(x, {channels, grid_h * patch, grid_w * patch});
  return reshape(x, {b, channels, grid_h * patch, grid_w * patch});
}

Tensor timestep_embedding(std::span<const double> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim, 0.0);
  for (std::size_t n = 0; n < t.size(); ++n)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out[n * dim + i] = std::cos(t[n] * freq);
      out[n * dim + half + i] = std::sin(t[n] * freq);
    }
  return Tensor::from({t.size(), dim}, std::move(out));
}

std::vector<double> sincos_2d_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  std::vector<double> out(grid_h * grid_w * dim, 0.0);
  const std::size_t axis_dim = dim / 2;
  const std::size_t quarter = axis_dim / 2;
  for (std::size_t r = 0; r < grid_h; ++r)
    for (std::size_t c = 0; c < grid_w; ++c) {
      double* row = out.data() + (r * grid_w + c) * dim;
      for (std::size_t axis = 0; axis < 2; ++axis) {
        const double pos = static_cast<double>(axis == 0 ? r : c);
        for (std::size_t i = 0; i < quarter; ++i) {
          const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
          row[axis * axis_dim + i] = std::sin(pos * omega);
          row[axis * axis_dim + quarter + i] = std::cos(pos * omega);
        }
      }
    }
  return out;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

DiTModel::DiTModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (auto v = validate_config(config_); !v.empty()) throw ConfigError("invalid model config: " + v.front());
  attn_ = config_.attention_config();
  positions_ = grid_positions(config_.grid_h, config_.grid_w);
  if (config_.pe_mode != PeMode::Ape) {
    rope_ = build_rotary_table(config_.pe_mode, config_.grid_h, config_.grid_w, attn_.head_dim, config_.rope_base);
  }

  Rng rng(seed);
  const std::size_t d = config_.hidden;
  x_embed_ = make_linear(config_.patch_dim(), d, rng);
  if (config_.pe_mode == PeMode::Ape) {
    pos_embed_ = Tensor::from({config_.tokens(), d}, sincos_2d_table(config_.grid_h, config_.grid_w, d), true);
  }
  t_mlp0_ = make_linear(config_.freq_dim, d, rng);
  t_mlp1_ = make_linear(d, d, rng);
  y_table_ = trunc_normal({config_.num_classes + 1, d}, kInitStd, rng);

  const std::size_t kv = config_.kv_heads() * attn_.head_dim;
  const MoEConfig moe_cfg = config_.moe_config();
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    Block blk;
    blk.ada = make_linear(d, 6 * d, rng, /*zero=*/true);
    blk.q = make_linear(d, d, rng);
    blk.k = make_linear(d, kv, rng);
    blk.v = make_linear(d, kv, rng);
    blk.o = make_linear(d, d, rng);
    blk.moe = config_.is_moe_block(b);
    if (blk.moe) {
      blk.experts = MoELayer::init(moe_cfg, rng, kInitStd);
    } else {
      blk.ffn_gate = trunc_normal({d, config_.dense_intermediate}, kInitStd, rng);
      blk.ffn_up = trunc_normal({d, config_.dense_intermediate}, kInitStd, rng);
      blk.ffn_down = trunc_normal({config_.dense_intermediate, d}, kInitStd, rng);
    }
    blocks_.push_back(std::move(blk));
  }
  final_ada_ = make_linear(d, 2 * d, rng, true);
  final_head_ = make_linear(d, config_.patch_dim(), rng, true);
}

Tensor DiTModel::attention_sublayer(const Block& blk, const Tensor& x) const {
  const std::size_t b = x.dim(0), t = x.dim(1);
  Tensor q = reshape(blk.q(x), {b, t, attn_.n_heads, attn_.head_dim});
  Tensor k = reshape(blk.k(x), {b, t, attn_.n_kv_heads, attn_.head_dim});
  Tensor v = reshape(blk.v(x), {b, t, attn_.n_kv_heads, attn_.head_dim});
  Tensor a = attention(q, k, v, attn_, rope_ ? &*rope_ : nullptr, positions_);
  return blk.o(reshape(a, {b, t, config_.hidden}));
}

ModelOutput DiTModel::forward(const Tensor& images, std::span<const double> t, std::span<const int> labels,
                              bool record_load) {
  const Shape want{images.rank() == 4 ? images.dim(0) : 0, config_.in_channels, config_.image_h(),
                   config_.image_w()};
  if (images.shape() != want) {
    throw ShapeError("forward: images " + shape_str(images.shape()) + " do not match model input [B," +
                     std::to_string(config_.in_channels) + "," + std::to_string(config_.image_h()) + "," +
                     std::to_string(config_.image_w()) + "]");
  }
  const std::size_t bsz = images.dim(0);
  if (t.size() != bsz || labels.size() != bsz) {
    throw ShapeError("forward: batch of " + std::to_string(bsz) + " images with " + std::to_string(t.size()) +
                     " timesteps and " + std::to_string(labels.size()) + " labels");
  }
  std::vector<double> scaled_t(bsz);
  std::vector<std::size_t> rows(bsz);
  for (std::size_t i = 0; i < bsz; ++i) {
    if (!(t[i] >= 0.0 && t[i] <= 1.0)) throw std::invalid_argument("forward: timestep outside [0,1]");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) > config_.num_classes) {
      throw std::invalid_argument("forward: class label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(config_.num_classes) + "]");
    }
    scaled_t[i] = t[i] * config_.timestep_scale;
    rows[i] = static_cast<std::size_t>(labels[i]);
  }

  const std::size_t d = config_.hidden;
  const std::size_t ntok = config_.tokens();
  Tensor x = x_embed_(patchify(images, config_.patch_size));
  if (pos_embed_.defined()) x = add(x, pos_embed_);

  Tensor temb = t_mlp1_(silu(t_mlp0_(timestep_embedding(scaled_t, config_.freq_dim))));
  Tensor cond = silu(add(temb, index_select(y_table_, rows)));

  ModelOutput result;
  std::size_t moe_index = 0;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    Block& blk = blocks_[bi];
    Tensor mod = blk.ada(cond);
    auto chunk = [&](std::size_t i) { return slice_last(mod, i * d, d); };

    Tensor h = modulate(plain_layernorm(x), chunk(0), chunk(1));
    x = add(x, mul(expand_tokens(chunk(2), ntok), attention_sublayer(blk, h)));

    Tensor u = reshape(modulate(plain_layernorm(x), chunk(3), chunk(4)), {bsz * ntok, d});
    Tensor f;
    if (blk.moe) {
      MoEOutput out = moe_ffn(u, blk.experts, record_load);
      f = out.output;
      result.routing.push_back({bi, moe_index++, std::move(out.selected)});
    } else {
      f = matmul(mul(silu(matmul(u, blk.ffn_gate)), matmul(u, blk.ffn_up)), blk.ffn_down);
    }
    x = add(x, mul(expand_tokens(chunk(5), ntok), reshape(f, {bsz, ntok, d})));
  }

  Tensor fmod = final_ada_(cond);
  x = modulate(plain_layernorm(x), slice_last(fmod, 0, d), slice_last(fmod, d, d));
  result.prediction = unpatchify(final_head_(x), config_.in_channels, config_.grid_h, config_.grid_w,
                                 config_.patch_size);
  return result;
}

std::vector<NamedParam> DiTModel::parameters() const {
  std::vector<NamedParam> p;
  auto lin = [&](const std::string& name, const Linear& l) {
    p.push_back({name + ".weight", l.weight});
    if (l.bias.defined()) p.push_back({name + ".bias", l.bias});
  };
  auto expert = [&](const std::string& name, const ExpertWeights& w) {
    p.push_back({name + ".gate", w.gate});
    p.push_back({name + ".up", w.up});
    p.push_back({name + ".down", w.down});
  };
  lin("x_embed", x_embed_);
  if (pos_embed_.defined()) p.push_back({"pos_embed", pos_embed_});
  lin("t_embed.mlp0", t_mlp0_);
  lin("t_embed.mlp1", t_mlp1_);
  p.push_back({"y_embed.table", y_table_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    lin(pre + "ada", blk.ada);
    lin(pre + "attn.q", blk.q);
    lin(pre + "attn.k", blk.k);
    lin(pre + "attn.v", blk.v);
    lin(pre + "attn.o", blk.o);
    if (blk.moe) {
      for (std::size_t i = 0; i < blk.experts.shared.size(); ++i)
        expert(pre + "moe.shared." + std::to_string(i), blk.experts.shared[i]);
      for (std::size_t i = 0; i < blk.experts.routed.size(); ++i)
        expert(pre + "moe.experts." + std::to_string(i), blk.experts.routed[i]);
      p.push_back({pre + "moe.router.centroids", blk.experts.router.centroids});
    } else {
      expert(pre + "ffn", {blk.ffn_gate, blk.ffn_up, blk.ffn_down});
    }
  }
  lin("final.ada", final_ada_);
  lin("final.head", final_head_);
  return p;
}

std::vector<MoELayer*> DiTModel::moe_layers() {
  std::vector<MoELayer*> out;
  for (auto& b : blocks_)
    if (b.moe) out.push_back(&b.experts);
  return out;
}

std::vector<const MoELayer*> DiTModel::moe_layers() const {
  std::vector<const MoELayer*> out;
  for (const auto& b : blocks_)
    if (b.moe) out.push_back(&b.experts);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> DiTModel::routing_state() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    if (blocks_[b].moe) out.emplace_back("blocks." + std::to_string(b) + ".moe.router.bias", &blocks_[b].experts.router.biases);
  return out;
}

std::vector<std::pair<std::string, const std::vector<double>*>> DiTModel::routing_state() const {
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    if (blocks_[b].moe) out.emplace_back("blocks." + std::to_string(b) + ".moe.router.bias", &blocks_[b].experts.router.biases);
  return out;
}

std::uint64_t DiTModel::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

}  // namespace dsmoe
