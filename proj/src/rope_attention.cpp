#include "dsmoe/rope_attention.hpp"

#include <cmath>
#include <memory>

namespace dsmoe {

std::string to_string(PeMode mode) {
  switch (mode) {
    case PeMode::Ape: return "ape";
    case PeMode::Rope1d: return "rope1d";
    case PeMode::Rope2d: return "rope2d";
  }
  return "?";
}

PeMode parse_pe_mode(const std::string& text) {
  if (text == "ape") return PeMode::Ape;
  if (text == "rope1d") return PeMode::Rope1d;
  if (text == "rope2d") return PeMode::Rope2d;
  throw std::invalid_argument("unknown positional encoding '" + text + "' (expected ape|rope1d|rope2d)");
}

std::vector<GridPos> grid_positions(std::size_t grid_h, std::size_t grid_w) {
  std::vector<GridPos> out;
  out.reserve(grid_h * grid_w);
  for (std::size_t r = 0; r < grid_h; ++r)
    for (std::size_t c = 0; c < grid_w; ++c) out.push_back({r, c});
  return out;
}

double RotaryTable::angle(GridPos pos, std::size_t pair) const {
  const std::size_t i = pos.row * grid_w + pos.col;
  return std::atan2(sin[i * pairs() + pair], cos[i * pairs() + pair]);
}

RotaryTable build_rotary_table(PeMode mode, std::size_t grid_h, std::size_t grid_w, std::size_t head_dim,
                               double base) {
  if (mode == PeMode::Ape) throw std::invalid_argument("rotary table: APE mode has no rotary table");
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("rotary table: empty grid");
  const std::size_t divisor = mode == PeMode::Rope2d ? 4 : 2;
  if (head_dim == 0 || head_dim % divisor != 0) {
    throw std::invalid_argument("rotary table: head_dim " + std::to_string(head_dim) + " not divisible by " +
                                std::to_string(divisor) + " for " + to_string(mode));
  }
  RotaryTable t;
  t.mode = mode;
  t.grid_h = grid_h;
  t.grid_w = grid_w;
  t.head_dim = head_dim;
  t.base = base;
  const std::size_t pairs = head_dim / 2;
  t.cos.resize(grid_h * grid_w * pairs);
  t.sin.resize(grid_h * grid_w * pairs);
  const double hd = static_cast<double>(head_dim);
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      const std::size_t i = r * grid_w + c;
      for (std::size_t p = 0; p < pairs; ++p) {
        double theta = 0.0;
        if (mode == PeMode::Rope1d) {
          const double freq = std::pow(base, -2.0 * static_cast<double>(p) / hd);
          theta = static_cast<double>(i) * freq;
        } else {
          // per-axis ladder over head_dim/2 effective dims: base^(-2j/(hd/2))
          const double j = static_cast<double>(p / 2);
          const double freq = std::pow(base, -2.0 * j / (hd / 2.0));
          theta = static_cast<double>(p % 2 == 0 ? r : c) * freq;
        }
        t.cos[i * pairs + p] = std::cos(theta);
        t.sin[i * pairs + p] = std::sin(theta);
      }
    }
  }
  return t;
}

Tensor apply_rope(const Tensor& x, const RotaryTable& table, std::span<const GridPos> positions) {
  if (x.rank() < 3) throw ShapeError("apply_rope: expected [..., tokens, heads, head_dim], got " + shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t hd = s[s.size() - 1];
  const std::size_t heads = s[s.size() - 2];
  const std::size_t tokens = s[s.size() - 3];
  if (hd != table.head_dim) {
    throw ShapeError("apply_rope: head_dim " + std::to_string(hd) + " does not match table " +
                     std::to_string(table.head_dim));
  }
  if (positions.size() != tokens) {
    throw ShapeError("apply_rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(tokens) +
                     " tokens");
  }
  auto entry = std::make_shared<std::vector<std::size_t>>(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    const GridPos p = positions[t];
    if (p.row >= table.grid_h || p.col >= table.grid_w) {
      throw std::out_of_range("apply_rope: position (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                              ") outside " + std::to_string(table.grid_h) + "x" + std::to_string(table.grid_w) +
                              " grid");
    }
    (*entry)[t] = p.row * table.grid_w + p.col;
  }
  const std::size_t half = hd / 2;
  const std::size_t outer = x.numel() / (tokens * heads * hd);
  auto cos_t = std::make_shared<std::vector<double>>(table.cos);
  auto sin_t = std::make_shared<std::vector<double>>(table.sin);

  auto rotate = [=](std::span<const double> in, double* out, double sign) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < tokens; ++t) {
        const double* cs = cos_t->data() + (*entry)[t] * half;
        const double* sn = sin_t->data() + (*entry)[t] * half;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t base = ((o * tokens + t) * heads + h) * hd;
          for (std::size_t i = 0; i < half; ++i) {
            const double a = in[base + i];
            const double b = in[base + i + half];
            out[base + i] += a * cs[i] - sign * b * sn[i];
            out[base + i + half] += b * cs[i] + sign * a * sn[i];
          }
        }
      }
  };

  std::vector<double> out(x.numel(), 0.0);
  rotate(x.values(), out.data(), 1.0);
  return Tensor::from_op("apply_rope", x.shape(), std::move(out), {x},
                         [rotate](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           rotate(g, gi[0]->data(), -1.0);
                         });
}

std::vector<std::string> AttentionConfig::violations() const {
  std::vector<std::string> v;
  if (n_heads == 0 || n_kv_heads == 0 || head_dim == 0) v.push_back("attention extents must be positive");
  if (n_kv_heads != 0 && n_heads % n_kv_heads != 0) {
    v.push_back("n_heads " + std::to_string(n_heads) + " not divisible by n_kv_heads " + std::to_string(n_kv_heads));
  }
  if (n_kv_heads > n_heads) v.push_back("n_kv_heads exceeds n_heads");
  if (n_kv_heads < n_heads && !gqa) v.push_back("n_kv_heads < n_heads requires the GQA flag");
  if (pe_mode == PeMode::Rope2d && head_dim % 4 != 0) {
    v.push_back("rope2d requires head_dim divisible by 4, got " + std::to_string(head_dim));
  }
  if (pe_mode == PeMode::Rope1d && head_dim % 2 != 0) {
    v.push_back("rope1d requires even head_dim, got " + std::to_string(head_dim));
  }
  return v;
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const AttentionConfig& cfg, const RotaryTable* table) {
  auto bad = [&](const std::string& why) {
    throw ShapeError("attention: " + why + " (q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ")");
  };
  if (auto v = cfg.violations(); !v.empty()) bad(v.front());
  if (q.rank() != 4 || k.rank() != 4) bad("expected rank-4 q and k");
  if (q.dim(2) != cfg.n_heads || q.dim(3) != cfg.head_dim) bad("q does not match config heads/head_dim");
  if (k.dim(0) != q.dim(0) || k.dim(1) != q.dim(1) || k.dim(2) != cfg.n_kv_heads || k.dim(3) != cfg.head_dim) {
    bad("k does not match config kv heads");
  }
  const bool rope = cfg.pe_mode != PeMode::Ape;
  if (rope != (table != nullptr)) bad("rotary table must be present exactly for RoPE modes");
  if (table && table->mode != cfg.pe_mode) bad("rotary table mode differs from config");
}

// [B,T,Hkv,hd] -> [B,T,H,hd] with contiguous query-head groups.
Tensor expand_kv(const Tensor& kv, std::size_t n_heads) {
  const std::size_t b = kv.dim(0), t = kv.dim(1), hkv = kv.dim(2), hd = kv.dim(3);
  if (hkv == n_heads) return kv;
  const std::size_t group = n_heads / hkv;
  std::vector<std::size_t> rows;
  rows.reserve(b * t * n_heads);
  for (std::size_t i = 0; i < b * t; ++i)
    for (std::size_t h = 0; h < n_heads; ++h) rows.push_back(i * hkv + h / group);
  Tensor flat = reshape(kv, {b * t * hkv, hd});
  return reshape(index_select(flat, rows), {b, t, n_heads, hd});
}

Tensor heads_major(const Tensor& x) {
  const std::size_t b = x.dim(0), t = x.dim(1), h = x.dim(2), hd = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b * h, t, hd});
}

}  // namespace

Tensor attention_logits(const Tensor& q, const Tensor& k, const AttentionConfig& config, const RotaryTable* table,
                        std::span<const GridPos> positions) {
  check_qkv(q, k, config, table);
  Tensor qr = table ? apply_rope(q, *table, positions) : q;
  Tensor kr = table ? apply_rope(k, *table, positions) : k;
  kr = expand_kv(kr, config.n_heads);
  return scale(matmul(heads_major(qr), transpose(heads_major(kr))),
               1.0 / std::sqrt(static_cast<double>(config.head_dim)));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& config,
                 const RotaryTable* table, std::span<const GridPos> positions) {
  if (v.shape() != k.shape()) {
    throw ShapeError("attention: v " + shape_str(v.shape()) + " does not match k " + shape_str(k.shape()));
  }
  Tensor probs = softmax_rows(attention_logits(q, k, config, table, positions));
  Tensor out = matmul(probs, heads_major(expand_kv(v, config.n_heads)));
  const std::size_t b = q.dim(0), t = q.dim(1), h = config.n_heads, hd = config.head_dim;
  return permute(reshape(out, {b, h, t, hd}), {0, 2, 1, 3});
}

}  // namespace dsmoe
