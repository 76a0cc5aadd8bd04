#include "dsmoe/config.hpp"

#include <regex>

namespace dsmoe {

std::string ExpertSpec::str() const {
  return "S" + std::to_string(shared) + "E" + std::to_string(routed) + "A" + std::to_string(active);
}

ExpertSpec parse_expert_spec(const std::string& spec) {
  static const std::regex pattern(R"(S(\d+)E(\d+)A(\d+))");
  std::smatch m;
  if (!std::regex_match(spec, m, pattern)) {
    throw ConfigError("malformed expert spec '" + spec + "' (expected S<n>E<n>A<n>)");
  }
  ExpertSpec out;
  try {
    out.shared = std::stoul(m[1].str());
    out.routed = std::stoul(m[2].str());
    out.active = std::stoul(m[3].str());
  } catch (const std::out_of_range&) {
    throw ConfigError("expert spec '" + spec + "' has an out-of-range count");
  }
  if (out.routed == 0) throw ConfigError("expert spec '" + spec + "' has no routed experts");
  if (out.active == 0) throw ConfigError("expert spec '" + spec + "' activates no experts");
  if (out.active > out.routed) {
    throw ConfigError("expert spec '" + spec + "': A=" + std::to_string(out.active) + " exceeds E=" +
                      std::to_string(out.routed));
  }
  return out;
}

bool ModelConfig::is_moe_block(std::size_t block) const {
  if (!interleave) return true;
  return (block % 2 == 0) == (moe_parity == MoeParity::Even);
}

std::size_t ModelConfig::moe_block_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < blocks; ++i) n += is_moe_block(i) ? 1 : 0;
  return n;
}

MoEConfig ModelConfig::moe_config() const {
  const ExpertSpec e = experts();
  return {e.shared, e.routed, e.active, hidden, intermediate};
}

AttentionConfig ModelConfig::attention_config() const {
  return {heads, kv_heads(), heads ? hidden / heads : 0, pe_mode, gqa_kv_heads.has_value()};
}

std::vector<std::string> validate_config(const ModelConfig& c) {
  std::vector<std::string> v;
  auto positive = [&](std::size_t value, const char* key) {
    if (value == 0) v.push_back(std::string(key) + " must be positive");
  };
  positive(c.blocks, "blocks");
  positive(c.hidden, "hidden");
  positive(c.intermediate, "intermediate");
  positive(c.dense_intermediate, "dense_intermediate");
  positive(c.heads, "heads");
  positive(c.patch_size, "patch_size");
  positive(c.in_channels, "in_channels");
  positive(c.num_classes, "num_classes");
  positive(c.grid_h, "grid_h");
  positive(c.grid_w, "grid_w");
  if (c.freq_dim == 0 || c.freq_dim % 2 != 0) v.push_back("freq_dim must be positive and even");
  if (c.heads != 0 && c.hidden % c.heads != 0) {
    v.push_back("hidden " + std::to_string(c.hidden) + " not divisible by heads " + std::to_string(c.heads));
  }
  try {
    const ExpertSpec e = parse_expert_spec(c.expert_spec);
    if (e.shared > 1) v.push_back("expert spec '" + c.expert_spec + "': shared expert count must be 0 or 1");
  } catch (const ConfigError& err) {
    v.push_back(err.what());
  }
  if (c.gqa_kv_heads && *c.gqa_kv_heads == c.heads) {
    v.push_back("gqa_kv_heads equals heads; omit it for standard attention");
  }
  if (c.heads != 0 && c.hidden % c.heads == 0) {
    for (auto& s : c.attention_config().violations()) v.push_back(s);
  }
  return v;
}

ParamCount count_parameters(const ModelConfig& c) {
  using u64 = std::uint64_t;
  const u64 d = c.hidden;
  const u64 pd = c.patch_dim();
  const ExpertSpec e = c.experts();
  const u64 hd = c.head_dim();
  const u64 kv = c.kv_heads() * hd;

  u64 fixed = 0;
  fixed += pd * d + d;                         // patch embedding
  fixed += c.freq_dim * d + d + d * d + d;     // timestep MLP
  fixed += (c.num_classes + 1) * d;            // class table with null row
  if (c.pe_mode == PeMode::Ape) fixed += c.tokens() * d;
  fixed += d * 2 * d + 2 * d + d * pd + pd;    // final adaLN + head

  const u64 attention = (d * d + d) * 2 + (d * kv + kv) * 2;
  const u64 modulation = d * 6 * d + 6 * d;
  const u64 expert = 3 * d * c.intermediate;
  const u64 dense = 3 * d * c.dense_intermediate;
  const u64 router = e.routed * d;

  ParamCount out{fixed, fixed};
  for (std::size_t b = 0; b < c.blocks; ++b) {
    out.total += attention + modulation;
    out.activated += attention + modulation;
    if (c.is_moe_block(b)) {
      out.total += (e.shared + e.routed) * expert + router;
      out.activated += (e.shared + e.active) * expert + router;
    } else {
      out.total += dense;
      out.activated += dense;
    }
  }
  return out;
}

Ablation parse_ablation(const std::string& text) {
  if (text == "s0a3") return Ablation::S0A3;
  if (text == "no-interleave") return Ablation::NoInterleave;
  if (text == "gqa") return Ablation::Gqa;
  throw ConfigError("unknown ablation '" + text + "' (expected s0a3|no-interleave|gqa)");
}

void apply_ablation(ModelConfig& c, Ablation ablation) {
  switch (ablation) {
    case Ablation::S0A3: {
      ExpertSpec e = c.experts();
      if (e.shared == 0) throw ConfigError("s0a3 ablation needs a config with a shared expert");
      e.shared = 0;
      e.active += 1;
      if (e.active > e.routed) throw ConfigError("s0a3 ablation would activate more experts than exist");
      c.expert_spec = e.str();
      break;
    }
    case Ablation::NoInterleave:
      c.interleave = false;
      break;
    case Ablation::Gqa:
      if (c.heads < 2 || c.heads % 2 != 0) {
        throw ConfigError("gqa ablation needs an even head count, got " + std::to_string(c.heads));
      }
      c.gqa_kv_heads = c.heads / 2;
      break;
  }
}

}  // namespace dsmoe
