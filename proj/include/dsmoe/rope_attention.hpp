#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsmoe/tensor.hpp"

namespace dsmoe {

enum class PeMode { Ape, Rope1d, Rope2d };

std::string to_string(PeMode mode);
PeMode parse_pe_mode(const std::string& text);

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
};

// Row-major positions of a full grid.
std::vector<GridPos> grid_positions(std::size_t grid_h, std::size_t grid_w);

// Rotary pairs use the half-split layout: dimension i rotates together with
// dimension i + head_dim/2. In 2D mode pair p carries the row phase when p is
// even and the column phase when p is odd, each axis using a frequency ladder
// over head_dim/2 effective dimensions.
inline constexpr bool kRopeHalfSplit = true;

struct RotaryTable {
  PeMode mode = PeMode::Rope2d;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t head_dim = 0;
  double base = 10000.0;
  // [grid_h*grid_w][head_dim/2], row-major over (row, col).
  std::vector<double> cos;
  std::vector<double> sin;

  std::size_t pairs() const { return head_dim / 2; }
  std::size_t entries() const { return grid_h * grid_w; }
  double angle(GridPos pos, std::size_t pair) const;
};

RotaryTable build_rotary_table(PeMode mode, std::size_t grid_h, std::size_t grid_w, std::size_t head_dim,
                               double base = 10000.0);

// x: [..., tokens, heads, head_dim]; positions.size() == tokens.
Tensor apply_rope(const Tensor& x, const RotaryTable& table, std::span<const GridPos> positions);

struct AttentionConfig {
  std::size_t n_heads = 1;
  std::size_t n_kv_heads = 1;
  std::size_t head_dim = 1;
  PeMode pe_mode = PeMode::Ape;
  bool gqa = false;

  // Empty when consistent.
  std::vector<std::string> violations() const;
};

// q: [B,T,H,hd]; k: [B,T,Hkv,hd]. Returns scaled logits [B*H,T,T] (RoPE applied
// to q and k first when the config asks for it).
Tensor attention_logits(const Tensor& q, const Tensor& k, const AttentionConfig& config,
                        const RotaryTable* table, std::span<const GridPos> positions);

// softmax(q k^T / sqrt(hd)) v per head. q: [B,T,H,hd]; k, v: [B,T,Hkv,hd].
// Returns [B,T,H,hd]. Query heads g*j .. g*j+g-1 share kv head j.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& config,
                 const RotaryTable* table, std::span<const GridPos> positions);

}  // namespace dsmoe
