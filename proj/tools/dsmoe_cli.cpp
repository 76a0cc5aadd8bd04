// dsmoe: train | sample | analyze | count-params | validate-config
//
// Exit codes: 0 success, 1 validation failure, 2 usage or runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsmoe/analytics.hpp"
#include "dsmoe/config_file.hpp"
#include "dsmoe/rectified_flow.hpp"
#include "dsmoe/train.hpp"

namespace fs = std::filesystem;
using namespace dsmoe;

namespace {

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  double cfg_scale = 1.0;
  std::string cfg_interval;
  std::string solver = "heun";
  std::size_t ode_steps = 50;
  std::optional<int> cls;
  std::size_t num_samples = 8;
  std::string pe;
  std::vector<std::string> ablations;
  std::string traces;
};

std::string human_count(std::uint64_t n) {
  char buf[32];
  if (n >= 1'000'000'000ULL) {
    std::snprintf(buf, sizeof buf, "%.3fB", static_cast<double>(n) / 1e9);
  } else {
    std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(n) / 1e6);
  }
  return buf;
}

// Applies --pe / --ablation / --seed / --steps on top of a loaded config and
// rejects the result if it is not runnable.
void apply_overrides(ConfigFile& cf, const Options& o) {
  if (!o.pe.empty()) cf.model.pe_mode = parse_pe_mode(o.pe);
  for (const auto& a : o.ablations) {
    const Ablation ab = parse_ablation(a);
    try {
      apply_ablation(cf.model, ab);
    } catch (const ConfigError& e) {
      throw ValidationFailure(std::string("ablation '") + a + "' does not apply: " + e.what());
    }
  }
  if (o.seed) cf.train.seed = *o.seed;
  if (o.steps) cf.train.steps = *o.steps;
}

void require_valid(const ConfigFile& cf) {
  auto v = validate_config(cf.model);
  for (auto& s : cf.train.violations()) v.push_back("train: " + s);
  if (v.empty()) return;
  std::string msg = "config '" + cf.model.name + "' is invalid:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ValidationFailure(msg);
}

ConfigFile load_with_overrides(const Options& o) {
  if (o.config.empty()) throw std::invalid_argument("--config is required");
  ConfigFile cf = load_config_file(o.config);
  apply_overrides(cf, o);
  return cf;
}

int cmd_validate(const Options& o) {
  ConfigFile cf = load_with_overrides(o);
  auto v = validate_config(cf.model);
  for (auto& s : cf.train.violations()) v.push_back("train: " + s);
  if (v.empty()) {
    std::cout << cf.model.name << ": ok\n";
    return 0;
  }
  std::cout << cf.model.name << ": " << v.size() << " problem(s)\n";
  for (const auto& s : v) std::cout << "  - " << s << '\n';
  return 1;
}

int cmd_count(const Options& o) {
  ConfigFile cf = load_with_overrides(o);
  require_valid(cf);
  const auto& m = cf.model;
  const ParamCount pc = count_parameters(m);
  std::printf("%-16s %-10s L=%-3zu D=%-5zu heads=%-3zu moe_blocks=%-3zu total=%-9s activated=%-9s (%llu / %llu)\n",
              m.name.c_str(), m.experts().str().c_str(), m.blocks, m.hidden, m.heads, m.moe_block_count(),
              human_count(pc.total).c_str(), human_count(pc.activated).c_str(),
              static_cast<unsigned long long>(pc.total), static_cast<unsigned long long>(pc.activated));
  return 0;
}

int cmd_train(const Options& o) {
  std::optional<CheckpointBundle> resume;
  if (!o.checkpoint.empty()) resume = load_checkpoint(o.checkpoint);
  ConfigFile cf;
  if (!o.config.empty()) {
    cf = load_with_overrides(o);
  } else if (resume) {
    cf = parse_config_text(resume->config_text);
    apply_overrides(cf, o);
  } else {
    throw std::invalid_argument("train needs --config or --checkpoint");
  }
  require_valid(cf);
  const fs::path out = o.out.empty() ? fs::path("run") : fs::path(o.out);
  fs::create_directories(out);
  const std::string config_text = config_to_text(cf);
  {
    std::ofstream(out / "config.json") << config_text;
  }

  Trainer trainer(cf.model, cf.train);
  if (resume) trainer.restore(*resume);
  MetricsWriter metrics(out / "metrics.csv", cf.model.moe_block_count(), cf.train.metrics_flush,
                        resume.has_value());
  while (trainer.step() < cf.train.steps) {
    const StepMetrics m = trainer.train_step();
    metrics.write(m);
    if (cf.train.checkpoint_every && m.step % cf.train.checkpoint_every == 0) {
      save_checkpoint(trainer.checkpoint(config_text), out / ("checkpoint-" + std::to_string(m.step) + ".dsmk"));
    }
    if (m.step == 1 || m.step % 50 == 0 || m.step == cf.train.steps) {
      std::printf("step %llu loss %.6f grad_norm %.4f\n", static_cast<unsigned long long>(m.step), m.loss,
                  m.grad_norm);
      std::fflush(stdout);
    }
  }
  save_checkpoint(trainer.checkpoint(config_text), out / "checkpoint.dsmk");
  std::cout << "wrote " << (out / "checkpoint.dsmk").string() << '\n';
  return 0;
}

std::pair<double, double> parse_interval(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("--cfg-interval expects LO,HI");
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw std::invalid_argument("--cfg-interval expects two numbers, got '" + text + "'");
  }
}

int cmd_sample(const Options& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("sample needs --checkpoint");
  const CheckpointBundle bundle = load_checkpoint(o.checkpoint);
  ConfigFile cf = parse_config_text(bundle.config_text);
  if (!o.pe.empty() || !o.ablations.empty()) {
    throw std::invalid_argument("--pe/--ablation change the architecture; retrain instead of sampling");
  }
  require_valid(cf);
  const ModelConfig& mc = cf.model;

  SamplerConfig sc;
  sc.solver = parse_solver(o.solver);
  sc.steps = o.ode_steps;
  sc.cfg_scale = o.cfg_scale;
  if (!o.cfg_interval.empty()) sc.cfg_interval = parse_interval(o.cfg_interval);
  if (auto v = sc.violations(); !v.empty()) {
    std::string msg = "invalid sampler settings:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ValidationFailure(msg);
  }
  if (o.cls && (*o.cls < 0 || static_cast<std::size_t>(*o.cls) >= mc.num_classes)) {
    throw ValidationFailure("--class must lie in [0, " + std::to_string(mc.num_classes) + ")");
  }
  if (o.num_samples == 0) throw ValidationFailure("--num-samples must be at least 1");

  DiTModel model(mc, 0);
  load_weights_into(model, bundle);
  load_ema_into(model, bundle.ema);

  const int null_label = static_cast<int>(mc.num_classes);
  std::vector<int> labels(o.num_samples);
  std::vector<std::size_t> ids(o.num_samples);
  for (std::size_t i = 0; i < o.num_samples; ++i) {
    labels[i] = o.cls ? *o.cls : static_cast<int>(i % mc.num_classes);
    ids[i] = i;
  }

  TraceFile traces;
  traces.num_experts = mc.experts().routed;
  traces.top_k = mc.experts().active;
  std::uint64_t evaluation = 0;
  Predictor predictor = [&](const Tensor& x, std::span<const double> t, std::span<const int> lab) {
    ModelOutput out = model.forward(x, t, lab);
    // Unconditional passes of guidance are not attributed to any class.
    if (lab[0] != null_label) {
      auto tr = traces_from_forward(out.routing, evaluation, ids, lab, t);
      traces.traces.insert(traces.traces.end(), tr.begin(), tr.end());
    }
    ++evaluation;
    return out.prediction.detach();
  };

  const std::uint64_t seed = o.seed.value_or(cf.train.seed);
  Rng rng(mix_seed(seed, 7));
  const Shape shape{o.num_samples, mc.in_channels, mc.image_h(), mc.image_w()};
  const Tensor images = sample(predictor, shape, labels, null_label, sc, rng);

  const fs::path out = o.out.empty() ? fs::path("samples") : fs::path(o.out);
  fs::create_directories(out);
  const std::size_t per = mc.in_channels * mc.image_h() * mc.image_w();
  auto values = images.values();
  nlohmann::json manifest;
  manifest["checkpoint"] = o.checkpoint;
  manifest["model"] = mc.name;
  manifest["train_step"] = bundle.step;
  manifest["weights"] = "ema";
  manifest["solver"] = to_string(sc.solver);
  manifest["ode_steps"] = sc.steps;
  manifest["cfg_scale"] = sc.cfg_scale;
  manifest["cfg_interval"] =
      sc.cfg_interval ? nlohmann::json::array({sc.cfg_interval->first, sc.cfg_interval->second}) : nlohmann::json();
  manifest["seed"] = seed;
  manifest["images"] = nlohmann::json::array();
  for (std::size_t i = 0; i < o.num_samples; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "sample_%04zu_class%d.ppm", i, labels[i]);
    write_ppm(out / name, values.subspan(i * per, per), mc.in_channels, mc.image_h(), mc.image_w());
    manifest["images"].push_back({{"file", name}, {"class", labels[i]}});
  }
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  write_traces(out / "traces.csv", traces);
  std::cout << "wrote " << o.num_samples << " images to " << out.string() << '\n';
  return 0;
}

int cmd_analyze(const Options& o) {
  if (o.traces.empty()) throw std::invalid_argument("analyze needs --traces");
  const TraceFile traces = read_traces(fs::path(o.traces));
  const UsageReport report = analyze_usage(traces);
  const fs::path out = o.out.empty() ? fs::path("analysis") : fs::path(o.out);
  write_usage_report(report, out);
  std::cout << "classes " << report.classes.size() << ", MoE layers " << report.num_layers << ", experts "
            << report.num_experts << '\n';
  if (!report.unused_experts.empty()) {
    std::cout << "unused expert(s):";
    for (std::size_t e : report.unused_experts) std::cout << ' ' << e;
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiT mixture-of-experts toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", o.config, "Config file (JSON)"); };
  auto add_arch = [&](CLI::App* sub) {
    sub->add_option("--pe", o.pe, "Position encoding")->check(CLI::IsMember({"ape", "rope1d", "rope2d"}));
    sub->add_option("--ablation", o.ablations, "Ablation(s)")
        ->check(CLI::IsMember({"s0a3", "no-interleave", "gqa"}));
  };

  auto* train = app.add_subcommand("train", "Train on the synthetic dataset");
  add_config(train);
  add_arch(train);
  train->add_option("--steps", o.steps, "Total steps");
  train->add_option("--seed", o.seed, "Seed");
  train->add_option("--out", o.out, "Output directory");
  train->add_option("--checkpoint", o.checkpoint, "Resume from checkpoint");

  auto* samp = app.add_subcommand("sample", "Generate images from a checkpoint's EMA weights");
  add_config(samp);
  add_arch(samp);
  samp->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  samp->add_option("--out", o.out, "Output directory");
  samp->add_option("--seed", o.seed, "Noise seed");
  samp->add_option("--cfg-scale", o.cfg_scale, "Guidance scale");
  samp->add_option("--cfg-interval", o.cfg_interval, "Guidance interval on t, LO,HI");
  samp->add_option("--solver", o.solver, "ODE solver")->check(CLI::IsMember({"euler", "heun"}));
  samp->add_option("--ode-steps", o.ode_steps, "ODE steps");
  samp->add_option("--class", o.cls, "Class label for every sample");
  samp->add_option("--num-samples", o.num_samples, "Number of images");

  auto* analyze = app.add_subcommand("analyze", "Expert-usage report from routing traces");
  analyze->add_option("--traces", o.traces, "Trace CSV")->required();
  analyze->add_option("--out", o.out, "Output directory");

  auto* count = app.add_subcommand("count-params", "Print total/activated parameter counts");
  add_config(count);
  add_arch(count);
  count->get_option("--config")->required();

  auto* validate = app.add_subcommand("validate-config", "Check a config");
  add_config(validate);
  add_arch(validate);
  validate->get_option("--config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*samp) return cmd_sample(o);
    if (*analyze) return cmd_analyze(o);
    if (*count) return cmd_count(o);
    if (*validate) return cmd_validate(o);
  } catch (const ValidationFailure& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    // Unreadable or malformed config files are runtime errors; violations
    // found on a parsed config are reported above.
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
