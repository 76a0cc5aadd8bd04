#include "dsmoe/config_file.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dsmoe {

using json = nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config key '" + it.key() + "' in " + where);
  }
}

}  // namespace

ConfigFile parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  reject_unknown(j,
                 {"name", "blocks", "hidden", "intermediate", "dense_intermediate", "heads", "expert_spec",
                  "interleave", "moe_parity", "pe_mode", "gqa_kv_heads", "patch_size", "in_channels", "num_classes",
                  "grid_h", "grid_w", "freq_dim", "timestep_scale", "rope_base", "train"},
                 "model section");
  ConfigFile cf;
  ModelConfig& m = cf.model;
  try {
    read_opt(j, "name", m.name);
    read_opt(j, "blocks", m.blocks);
    read_opt(j, "hidden", m.hidden);
    read_opt(j, "intermediate", m.intermediate);
    m.dense_intermediate = 2 * m.hidden;
    read_opt(j, "dense_intermediate", m.dense_intermediate);
    read_opt(j, "heads", m.heads);
    read_opt(j, "expert_spec", m.expert_spec);
    read_opt(j, "interleave", m.interleave);
    if (auto it = j.find("moe_parity"); it != j.end()) {
      const auto p = it->get<std::string>();
      if (p != "even" && p != "odd") throw ConfigError("moe_parity must be 'even' or 'odd'");
      m.moe_parity = p == "even" ? MoeParity::Even : MoeParity::Odd;
    }
    if (auto it = j.find("pe_mode"); it != j.end()) m.pe_mode = parse_pe_mode(it->get<std::string>());
    if (auto it = j.find("gqa_kv_heads"); it != j.end() && !it->is_null()) m.gqa_kv_heads = it->get<std::size_t>();
    read_opt(j, "patch_size", m.patch_size);
    read_opt(j, "in_channels", m.in_channels);
    read_opt(j, "num_classes", m.num_classes);
    read_opt(j, "grid_h", m.grid_h);
    read_opt(j, "grid_w", m.grid_w);
    read_opt(j, "freq_dim", m.freq_dim);
    read_opt(j, "timestep_scale", m.timestep_scale);
    read_opt(j, "rope_base", m.rope_base);

    if (auto it = j.find("train"); it != j.end()) {
      const json& t = *it;
      reject_unknown(t,
                     {"lr", "weight_decay", "beta1", "beta2", "adam_eps", "batch", "steps", "ema_decay",
                      "label_drop", "flip_prob", "grad_clip", "seed", "bias_update_rate", "metrics_flush",
                      "checkpoint_every", "time_sampler", "logit_mu", "logit_sigma", "noise_scale"},
                     "train section");
      TrainConfig& tc = cf.train;
      read_opt(t, "lr", tc.lr);
      read_opt(t, "weight_decay", tc.weight_decay);
      read_opt(t, "beta1", tc.beta1);
      read_opt(t, "beta2", tc.beta2);
      read_opt(t, "adam_eps", tc.adam_eps);
      read_opt(t, "batch", tc.batch);
      read_opt(t, "steps", tc.steps);
      read_opt(t, "ema_decay", tc.ema_decay);
      read_opt(t, "label_drop", tc.label_drop);
      read_opt(t, "flip_prob", tc.flip_prob);
      read_opt(t, "grad_clip", tc.grad_clip);
      read_opt(t, "seed", tc.seed);
      read_opt(t, "bias_update_rate", tc.bias_update_rate);
      read_opt(t, "metrics_flush", tc.metrics_flush);
      read_opt(t, "checkpoint_every", tc.checkpoint_every);
      if (auto ts = t.find("time_sampler"); ts != t.end()) {
        const auto mode = ts->get<std::string>();
        if (mode == "uniform") {
          tc.time_sampler.mode = TimeSampler::Mode::Uniform;
        } else if (mode == "logit-normal") {
          tc.time_sampler.mode = TimeSampler::Mode::LogitNormal;
        } else {
          throw ConfigError("time_sampler must be 'uniform' or 'logit-normal'");
        }
      }
      read_opt(t, "logit_mu", tc.time_sampler.mu);
      read_opt(t, "logit_sigma", tc.time_sampler.sigma);
      read_opt(t, "noise_scale", tc.noise_scale);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cf;
}

std::string config_to_text(const ConfigFile& cf) {
  const ModelConfig& m = cf.model;
  const TrainConfig& t = cf.train;
  json j;
  j["name"] = m.name;
  j["blocks"] = m.blocks;
  j["hidden"] = m.hidden;
  j["intermediate"] = m.intermediate;
  j["dense_intermediate"] = m.dense_intermediate;
  j["heads"] = m.heads;
  j["expert_spec"] = m.expert_spec;
  j["interleave"] = m.interleave;
  j["moe_parity"] = m.moe_parity == MoeParity::Even ? "even" : "odd";
  j["pe_mode"] = to_string(m.pe_mode);
  j["gqa_kv_heads"] = m.gqa_kv_heads ? json(*m.gqa_kv_heads) : json(nullptr);
  j["patch_size"] = m.patch_size;
  j["in_channels"] = m.in_channels;
  j["num_classes"] = m.num_classes;
  j["grid_h"] = m.grid_h;
  j["grid_w"] = m.grid_w;
  j["freq_dim"] = m.freq_dim;
  j["timestep_scale"] = m.timestep_scale;
  j["rope_base"] = m.rope_base;
  json tr;
  tr["lr"] = t.lr;
  tr["weight_decay"] = t.weight_decay;
  tr["beta1"] = t.beta1;
  tr["beta2"] = t.beta2;
  tr["adam_eps"] = t.adam_eps;
  tr["batch"] = t.batch;
  tr["steps"] = t.steps;
  tr["ema_decay"] = t.ema_decay;
  tr["label_drop"] = t.label_drop;
  tr["flip_prob"] = t.flip_prob;
  tr["grad_clip"] = t.grad_clip;
  tr["seed"] = t.seed;
  tr["bias_update_rate"] = t.bias_update_rate;
  tr["metrics_flush"] = t.metrics_flush;
  tr["checkpoint_every"] = t.checkpoint_every;
  tr["time_sampler"] = to_string(t.time_sampler.mode);
  tr["logit_mu"] = t.time_sampler.mu;
  tr["logit_sigma"] = t.time_sampler.sigma;
  tr["noise_scale"] = t.noise_scale;
  j["train"] = tr;
  return j.dump(2) + "\n";
}

ConfigFile load_config_file(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  if (!std::filesystem::exists(p)) {
    std::filesystem::path alt = p;
    alt += ".json";
    if (std::filesystem::exists(alt)) p = alt;
  }
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace dsmoe
