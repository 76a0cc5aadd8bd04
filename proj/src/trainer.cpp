#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dsmoe/train.hpp"

namespace dsmoe {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> v;
  if (!(lr >= 0.0)) v.push_back("learning rate must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) v.push_back("ema decay must lie in [0, 1)");
  if (batch < 1) v.push_back("batch must be at least 1");
  if (!(label_drop >= 0.0 && label_drop <= 1.0)) v.push_back("label drop probability must lie in [0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) v.push_back("flip probability must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) v.push_back("Adam betas must lie in [0, 1)");
  if (!(grad_clip >= 0.0)) v.push_back("grad clip must be non-negative");
  if (metrics_flush < 1) v.push_back("metrics flush cadence must be at least 1");
  return v;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::size_t moe_layers, std::size_t flush_every,
                             bool append)
    : flush_every_(std::max<std::size_t>(flush_every, 1)) {
  const bool existing = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics file '" + path.string() + "'");
  if (!existing) out_ << header(moe_layers) << '\n' << std::flush;
}

std::string MetricsWriter::header(std::size_t moe_layers) {
  std::string h = "step,loss,grad_norm";
  for (std::size_t i = 0; i < moe_layers; ++i) h += ",load_std_layer_" + std::to_string(i);
  return h + ",experts_active_fraction";
}

void MetricsWriter::write(const StepMetrics& m) {
  char buf[64];
  out_ << m.step;
  for (double v : {m.loss, m.grad_norm}) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out_ << buf;
  }
  for (double v : m.load_std) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out_ << buf;
  }
  std::snprintf(buf, sizeof buf, ",%.17g", m.experts_active_fraction);
  out_ << buf << '\n';
  if (++pending_ >= flush_every_) {
    out_.flush();
    pending_ = 0;
  }
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& train_config)
    : model_cfg_(model_config),
      cfg_(train_config),
      model_(model_config, mix_seed(train_config.seed, 2)),
      opt_(train_config),
      rng_(mix_seed(train_config.seed, 1)),
      data_(model_config.num_classes, model_config.in_channels, model_config.image_h(), model_config.image_w(),
            mix_seed(train_config.seed, 3)) {
  if (auto v = cfg_.violations(); !v.empty()) throw ConfigError("invalid train config: " + v.front());
  for (MoELayer* layer : model_.moe_layers()) layer->router.bias_update_rate = cfg_.bias_update_rate;
  ema_ = Ema(model_.parameters());
}

StepMetrics Trainer::train_step() {
  auto params = model_.parameters();
  for (auto& p : params) p.tensor.zero_grad();

  const std::size_t b = cfg_.batch;
  const std::size_t c = data_.channels(), h = data_.height(), w = data_.width();
  const std::size_t per = data_.image_size();
  std::vector<double> images(b * per);
  std::vector<int> labels(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t cls = rng_.uniform_index(data_.num_classes());
    const std::uint64_t index = rng_.uniform_index(std::size_t{1} << 40);
    auto img = data_.image(cls, index);
    if (rng_.bernoulli(cfg_.flip_prob)) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
          auto row = img.begin() + static_cast<long>((ch * h + y) * w);
          std::reverse(row, row + static_cast<long>(w));
        }
    }
    std::copy(img.begin(), img.end(), images.begin() + static_cast<long>(i * per));
    labels[i] = static_cast<int>(cls);
  }
  Tensor x0 = Tensor::from({b, c, h, w}, std::move(images));

  RfLossOptions opts;
  opts.time_sampler = cfg_.time_sampler;
  opts.label_drop = cfg_.label_drop;
  opts.null_label = static_cast<int>(model_cfg_.num_classes);
  opts.noise_scale = cfg_.noise_scale;
  Predictor predictor = [this](const Tensor& x, std::span<const double> t, std::span<const int> y) {
    return model_.forward(x, t, y, /*record_load=*/true).prediction;
  };

  RfLossResult result;
  try {
    result = rf_loss(predictor, x0, labels, opts, rng_);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  const double loss = result.loss.item();
  if (!std::isfinite(loss)) throw NonFiniteError("step " + std::to_string(step_ + 1) + ": non-finite loss");
  result.loss.backward();

  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NonFiniteError("step " + std::to_string(step_ + 1) + ": non-finite gradient in '" + p.name + "'");
      }
      sq += g * g;
    }
  }
  const double grad_norm = std::sqrt(sq);
  if (cfg_.grad_clip > 0.0 && grad_norm > cfg_.grad_clip) {
    const double f = cfg_.grad_clip / grad_norm;
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (double& g : p.tensor.mutable_grad()) g *= f;
  }

  opt_.step(params);
  ema_.update(params, cfg_.ema_decay);

  StepMetrics m;
  m.step = ++step_;
  m.loss = loss;
  m.grad_norm = grad_norm;
  std::size_t active = 0, slots = 0;
  for (MoELayer* layer : model_.moe_layers()) {
    m.load_std.push_back(layer->router.window_load_std());
    for (auto l : layer->router.window_load) active += l > 0 ? 1 : 0;
    slots += layer->router.window_load.size();
    update_bias(layer->router);
  }
  m.experts_active_fraction = slots ? static_cast<double>(active) / static_cast<double>(slots) : 0.0;
  return m;
}

CheckpointBundle Trainer::checkpoint(const std::string& config_text) const {
  CheckpointBundle b;
  b.config_text = config_text;
  for (const auto& p : model_.parameters()) {
    auto v = p.tensor.values();
    b.weights.push_back({p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  for (auto& [name, state] : model_.routing_state()) {
    b.weights.push_back({name, {state->size()}, *state});
  }
  b.step = step_;
  b.adam_m = opt_.first_moments();
  b.adam_v = opt_.second_moments();
  b.ema = ema_.shadow();
  b.rng_state = rng_.state();
  return b;
}

void load_weights_into(DiTModel& model, const CheckpointBundle& bundle) {
  auto params = model.parameters();
  auto state = model.routing_state();
  const std::size_t expected = params.size() + state.size();
  for (std::size_t i = 0; i < std::max(expected, bundle.weights.size()); ++i) {
    std::string want;
    Shape want_shape;
    if (i < params.size()) {
      want = params[i].name;
      want_shape = params[i].tensor.shape();
    } else if (i < expected) {
      want = state[i - params.size()].first;
      want_shape = {state[i - params.size()].second->size()};
    }
    const NamedArray* got = i < bundle.weights.size() ? &bundle.weights[i] : nullptr;
    if (!got || got->name != want || got->shape != want_shape) {
      throw CheckpointError("checkpoint key mismatch at entry " + std::to_string(i) + ": model expects '" +
                            (want.empty() ? "<end>" : want + " " + shape_str(want_shape)) + "', checkpoint has '" +
                            (got ? got->name + " " + shape_str(got->shape) : std::string("<end>")) + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    std::copy(bundle.weights[i].values.begin(), bundle.weights[i].values.end(), dst.begin());
  }
  for (std::size_t i = 0; i < state.size(); ++i) *state[i].second = bundle.weights[params.size() + i].values;
  for (MoELayer* layer : model.moe_layers()) layer->router.reset_window();
}

void Trainer::restore(const CheckpointBundle& bundle) {
  load_weights_into(model_, bundle);
  for (const auto& p : model_.parameters()) {
    auto it = bundle.ema.find(p.name);
    if (it == bundle.ema.end() || it->second.size() != p.tensor.numel()) {
      throw CheckpointError("checkpoint EMA table lacks '" + p.name + "'");
    }
  }
  opt_.restore(bundle.step, bundle.adam_m, bundle.adam_v);
  ema_.restore(bundle.ema);
  rng_.restore(bundle.rng_state);
  step_ = bundle.step;
}

void load_ema_into(DiTModel& model, const ParamTable& shadow) {
  for (auto& p : model.parameters()) {
    auto it = shadow.find(p.name);
    if (it == shadow.end() || it->second.size() != p.tensor.numel()) {
      throw CheckpointError("EMA table lacks '" + p.name + "'");
    }
    auto dst = p.tensor.mutable_values();
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  }
}

}  // namespace dsmoe
