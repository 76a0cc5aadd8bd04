#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dsmoe/config_file.hpp"
#include "dsmoe/train.hpp"

using namespace dsmoe;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.name = "unit";
  m.blocks = 2;
  m.hidden = 16;
  m.intermediate = 16;
  m.dense_intermediate = 32;
  m.heads = 2;
  m.expert_spec = "S1E4A2";
  m.patch_size = 2;
  m.in_channels = 3;
  m.num_classes = 4;
  m.grid_h = 2;
  m.grid_w = 2;
  m.freq_dim = 16;
  return m;
}

TrainConfig small_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch = 4;
  t.steps = 10;
  t.ema_decay = 0.9;
  t.seed = 5;
  return t;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dsmoe_test_train";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<double> flat_weights(const DiTModel& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) {
    auto v = p.tensor.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace

TEST(SyntheticDataset, DeterministicAndBounded) {
  SyntheticDataset a(5, 3, 8, 8, 11), b(5, 3, 8, 8, 11), c(5, 3, 8, 8, 12);
  EXPECT_EQ(a.image(2, 17), b.image(2, 17));
  EXPECT_NE(a.image(2, 17), c.image(2, 17));
  EXPECT_NE(a.image(2, 17), a.image(3, 17));
  EXPECT_NE(a.image(2, 17), a.image(2, 18));
  for (std::size_t cls = 0; cls < 5; ++cls) {
    auto img = a.image(cls, cls * 3);
    ASSERT_EQ(img.size(), a.image_size());
    for (double v : img) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(a.image(5, 0), std::out_of_range);
  EXPECT_THROW(SyntheticDataset(0, 3, 8, 8, 0), std::invalid_argument);
}

TEST(AdamW, MatchesScalarOracle) {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.1;
  cfg.beta1 = 0.8;
  cfg.beta2 = 0.95;
  cfg.adam_eps = 1e-6;
  AdamW opt(cfg);
  std::vector<NamedParam> params{{"w", Tensor::from({2}, {0.7, -1.3}, true)}};

  double w[2] = {0.7, -1.3}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 5; ++step) {
    params[0].tensor.zero_grad();
    // loss = sum(w^3) / 3, grad = w^2
    Tensor x = params[0].tensor;
    scale(sum(mul(mul(x, x), x)), 1.0 / 3.0).backward();
    opt.step(params);
    for (int i = 0; i < 2; ++i) {
      const double g = w[i] * w[i];
      m[i] = 0.8 * m[i] + 0.2 * g;
      v[i] = 0.95 * v[i] + 0.05 * g * g;
      const double mh = m[i] / (1 - std::pow(0.8, step)), vh = v[i] / (1 - std::pow(0.95, step));
      w[i] -= 0.05 * (mh / (std::sqrt(vh) + 1e-6) + 0.1 * w[i]);
      EXPECT_NEAR(params[0].tensor.at(i), w[i], 1e-14);
    }
  }
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(AdamW, ZeroLearningRateLeavesWeights) {
  TrainConfig t = small_train();
  t.lr = 0.0;
  Trainer trainer(small_model(), t);
  auto before = flat_weights(trainer.model());
  for (int i = 0; i < 3; ++i) trainer.train_step();
  EXPECT_EQ(flat_weights(trainer.model()), before);
}

TEST(Ema, ZeroDecayTracksWeights) {
  TrainConfig t = small_train();
  t.ema_decay = 0.0;
  Trainer trainer(small_model(), t);
  for (int i = 0; i < 2; ++i) trainer.train_step();
  for (const auto& p : trainer.model().parameters()) {
    auto v = p.tensor.values();
    EXPECT_EQ(trainer.ema().shadow().at(p.name), std::vector<double>(v.begin(), v.end())) << p.name;
  }
}

TEST(Ema, UpdateRule) {
  std::vector<NamedParam> params{{"a", Tensor::from({2}, {1.0, 2.0})}};
  Ema ema(params);
  params[0].tensor.mutable_values()[0] = 3.0;
  ema.update(params, 0.75);
  EXPECT_DOUBLE_EQ(ema.shadow().at("a")[0], 0.75 * 1.0 + 0.25 * 3.0);
  EXPECT_DOUBLE_EQ(ema.shadow().at("a")[1], 2.0);
}

TEST(TrainConfig, Violations) {
  TrainConfig t;
  EXPECT_TRUE(t.violations().empty());
  t.ema_decay = 1.0;
  EXPECT_FALSE(t.violations().empty());
  t = {};
  t.batch = 0;
  EXPECT_FALSE(t.violations().empty());
  t = {};
  t.lr = -1;
  EXPECT_THROW(Trainer(small_model(), t), ConfigError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Trainer trainer(small_model(), small_train());
  for (int i = 0; i < 3; ++i) trainer.train_step();
  const std::string text = config_to_text({small_model(), small_train()});
  auto bytes = serialize_checkpoint(trainer.checkpoint(text));
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DSMK");
  CheckpointBundle back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.config_text, text);
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  auto path = scratch("roundtrip.dsmk");
  save_checkpoint(back, path);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);
}

TEST(Checkpoint, RejectsTruncationAndVersion) {
  Trainer trainer(small_model(), small_train());
  auto bytes = serialize_checkpoint(trainer.checkpoint("{}"));
  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(deserialize_checkpoint(part), CheckpointError) << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(extra), CheckpointError);

  auto bumped = bytes;
  bumped[4] = 2;
  try {
    deserialize_checkpoint(bumped);
    FAIL() << "version 2 accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint(scratch("missing.dsmk")), CheckpointError);
}

TEST(Checkpoint, KeyMismatchNamesEntry) {
  Trainer a(small_model(), small_train());
  ModelConfig other = small_model();
  other.hidden = 32;
  other.heads = 4;
  Trainer b(other, small_train());
  try {
    b.restore(a.checkpoint("{}"));
    FAIL() << "mismatched checkpoint accepted";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("key mismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find(b.model().parameters().front().name), std::string::npos) << msg;
  }
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  Trainer straight(small_model(), small_train());
  std::vector<double> losses;
  for (int i = 0; i < 6; ++i) losses.push_back(straight.train_step().loss);

  Trainer first(small_model(), small_train());
  for (int i = 0; i < 3; ++i) first.train_step();
  auto bytes = serialize_checkpoint(first.checkpoint("{}"));

  Trainer resumed(small_model(), small_train());
  resumed.restore(deserialize_checkpoint(bytes));
  EXPECT_EQ(resumed.step(), 3u);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(resumed.train_step().loss, losses[i]) << "step " << i + 1;
  EXPECT_EQ(flat_weights(resumed.model()), flat_weights(straight.model()));
  EXPECT_EQ(resumed.ema().shadow(), straight.ema().shadow());
}

TEST(Trainer, SameSeedSameRun) {
  Trainer a(small_model(), small_train()), b(small_model(), small_train());
  for (int i = 0; i < 3; ++i) {
    StepMetrics ma = a.train_step(), mb = b.train_step();
    EXPECT_EQ(ma.loss, mb.loss);
    EXPECT_EQ(ma.grad_norm, mb.grad_norm);
    EXPECT_EQ(ma.load_std, mb.load_std);
  }
  TrainConfig other = small_train();
  other.seed = 6;
  Trainer c(small_model(), other);
  EXPECT_NE(c.train_step().loss, Trainer(small_model(), small_train()).train_step().loss);
}

TEST(Trainer, MetricsShape) {
  Trainer t(small_model(), small_train());
  StepMetrics m = t.train_step();
  EXPECT_EQ(m.step, 1u);
  EXPECT_EQ(m.load_std.size(), t.model().moe_layers().size());
  EXPECT_GT(m.grad_norm, 0.0);
  EXPECT_GT(m.experts_active_fraction, 0.0);
  EXPECT_LE(m.experts_active_fraction, 1.0);
}

TEST(Trainer, NonFiniteWeightsReportStep) {
  Trainer t(small_model(), small_train());
  t.train_step();
  auto params = t.model().parameters();
  params.front().tensor.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.train_step();
    FAIL() << "NaN weight went unnoticed";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(MetricsWriter, HeaderAndAppend) {
  EXPECT_EQ(MetricsWriter::header(2), "step,loss,grad_norm,load_std_layer_0,load_std_layer_1,experts_active_fraction");
  auto path = scratch("metrics.csv");
  {
    MetricsWriter w(path, 1);
    w.write({1, 0.5, 2.0, {0.25}, 1.0});
  }
  {
    MetricsWriter w(path, 1, 1, /*append=*/true);
    w.write({2, 0.125, 1.0, {0.0}, 0.5});
  }
  EXPECT_EQ(slurp(path),
            "step,loss,grad_norm,load_std_layer_0,experts_active_fraction\n"
            "1,0.5,2,0.25,1\n"
            "2,0.125,1,0,0.5\n");
}
