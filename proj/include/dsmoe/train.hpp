#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsmoe/config.hpp"
#include "dsmoe/dit.hpp"
#include "dsmoe/random.hpp"
#include "dsmoe/rectified_flow.hpp"

namespace dsmoe {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 32;
  std::size_t steps = 1000;
  double ema_decay = 0.9999;
  double label_drop = 0.1;
  double flip_prob = 0.5;
  double grad_clip = 0.0;  // 0 disables
  std::uint64_t seed = 0;
  double bias_update_rate = 0.01;
  std::size_t metrics_flush = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  TimeSampler time_sampler;
  double noise_scale = 1.0;

  std::vector<std::string> violations() const;
};

// Class-conditional images in [-1, 1]: an oriented sinusoidal grating whose
// frequency, orientation and colour balance depend on the class, with a
// per-image phase and seeded pixel noise.
class SyntheticDataset {
 public:
  SyntheticDataset(std::size_t num_classes, std::size_t channels, std::size_t height, std::size_t width,
                   std::uint64_t seed);

  // [C,H,W] values, bitwise reproducible for identical arguments.
  std::vector<double> image(std::size_t cls, std::uint64_t index) const;
  std::size_t image_size() const { return channels_ * height_ * width_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

 private:
  std::size_t num_classes_, channels_, height_, width_;
  std::uint64_t seed_;
};

// Named float tables used for weights, moments and EMA shadows.
using ParamTable = std::map<std::string, std::vector<double>>;

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const TrainConfig& cfg) : lr_(cfg.lr), wd_(cfg.weight_decay), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps) {}

  // One update of every parameter with a populated gradient.
  void step(std::vector<NamedParam>& params);

  std::uint64_t steps() const { return t_; }
  const ParamTable& first_moments() const { return m_; }
  const ParamTable& second_moments() const { return v_; }
  void restore(std::uint64_t steps, ParamTable m, ParamTable v);

 private:
  double lr_ = 1e-4, wd_ = 0.0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  ParamTable m_, v_;
};

class Ema {
 public:
  Ema() = default;
  explicit Ema(const std::vector<NamedParam>& params);

  // shadow <- decay * shadow + (1 - decay) * weights
  void update(const std::vector<NamedParam>& params, double decay);
  const ParamTable& shadow() const { return shadow_; }
  void restore(ParamTable shadow) { shadow_ = std::move(shadow); }

 private:
  ParamTable shadow_;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointBundle {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::string config_text;
  std::vector<NamedArray> weights;  // trainable parameters, then routing state
  std::uint64_t step = 0;
  ParamTable adam_m;
  ParamTable adam_v;
  ParamTable ema;
  std::string rng_state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian "DSMK", u32 version, then u64-length-prefixed sections:
// config text, weights, optimizer, EMA, RNG.
std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& bundle);
CheckpointBundle deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::vector<double> load_std;  // per MoE layer
  double experts_active_fraction = 0.0;
};

// Append-only CSV: step,loss,grad_norm,load_std_layer_0..N-1,experts_active_fraction
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::size_t moe_layers, std::size_t flush_every = 1,
                bool append = false);
  void write(const StepMetrics& m);
  static std::string header(std::size_t moe_layers);

 private:
  std::ofstream out_;
  std::size_t flush_every_;
  std::size_t pending_ = 0;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& train_config);

  StepMetrics train_step();

  DiTModel& model() { return model_; }
  const DiTModel& model() const { return model_; }
  const Ema& ema() const { return ema_; }
  const AdamW& optimizer() const { return opt_; }
  const TrainConfig& train_config() const { return cfg_; }
  std::uint64_t step() const { return step_; }
  const SyntheticDataset& dataset() const { return data_; }

  CheckpointBundle checkpoint(const std::string& config_text) const;
  // Throws CheckpointError naming the first key that differs from this model.
  void restore(const CheckpointBundle& bundle);

 private:
  ModelConfig model_cfg_;
  TrainConfig cfg_;
  DiTModel model_;
  AdamW opt_;
  Ema ema_;
  Rng rng_;
  SyntheticDataset data_;
  std::uint64_t step_ = 0;
};

// Copies EMA shadow weights into the model's parameters.
void load_ema_into(DiTModel& model, const ParamTable& shadow);
// Restores weights/routing state from a bundle into a model with the same layout.
void load_weights_into(DiTModel& model, const CheckpointBundle& bundle);

}  // namespace dsmoe
