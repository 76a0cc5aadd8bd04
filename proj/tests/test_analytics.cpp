#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dsmoe/analytics.hpp"
#include "dsmoe/random.hpp"

using namespace dsmoe;

namespace {

RoutingTrace trace(std::size_t layer, std::size_t image, int cls, double t,
                   std::vector<std::vector<std::size_t>> selected) {
  RoutingTrace r;
  r.layer = layer;
  r.image = image;
  r.class_label = cls;
  r.timestep = t;
  r.selected = std::move(selected);
  return r;
}

// K distinct experts out of E, uniformly at random.
std::vector<std::size_t> random_subset(Rng& rng, std::size_t e, std::size_t k) {
  std::vector<std::size_t> all(e);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.uniform_index(e - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

TraceFile random_file(std::uint64_t seed, std::size_t layers, std::size_t images, std::size_t tokens) {
  Rng rng(seed);
  TraceFile f{16, 2, {}};
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t i = 0; i < images; ++i) {
      std::vector<std::vector<std::size_t>> sel;
      for (std::size_t t = 0; t < tokens; ++t) sel.push_back(random_subset(rng, 16, 2));
      f.traces.push_back(trace(l, i, static_cast<int>(i % 3), 0.25 * static_cast<double>(i % 4), sel));
    }
  return f;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(AnalyzeUsage, TwoFixedExperts) {
  TraceFile f{8, 2, {}};
  f.traces.push_back(trace(0, 0, 3, 0.5, std::vector<std::vector<std::size_t>>(6, {0, 1})));
  UsageReport r = analyze_usage(f);
  ASSERT_EQ(r.classes, std::vector<int>{3});
  EXPECT_EQ(r.experts_per_class[0][0], 2.0);
  EXPECT_EQ(r.layer_frequency[0], (std::vector<double>{1, 1, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(r.unused_experts, (std::vector<std::size_t>{2, 3, 4, 5, 6, 7}));
}

TEST(AnalyzeUsage, UniformRoutingFrequency) {
  // 10^4 tokens in one layer
  TraceFile f = random_file(1, 1, 100, 100);
  UsageReport r = analyze_usage(f);
  double total = 0;
  for (double v : r.layer_frequency[0]) {
    EXPECT_NEAR(v, 0.125, 0.01);
    total += v;
  }
  EXPECT_NEAR(total, 2.0, 1e-12);
  EXPECT_TRUE(r.unused_experts.empty());
}

TEST(AnalyzeUsage, UnusedOnlyWhenIdleInEveryLayer) {
  TraceFile f{4, 1, {}};
  f.traces.push_back(trace(0, 0, 0, 0.1, {{0}, {1}}));
  f.traces.push_back(trace(1, 0, 0, 0.1, {{2}, {0}}));
  UsageReport r = analyze_usage(f);
  EXPECT_EQ(r.num_layers, 2u);
  EXPECT_EQ(r.unused_experts, std::vector<std::size_t>{3});
}

TEST(AnalyzeUsage, ClassAveraging) {
  // class 0: one image using {0,1} everywhere, one image spreading over {0,1,2,3}
  // class 1: one image using {2,3}
  TraceFile f{4, 2, {}};
  f.traces.push_back(trace(0, 0, 0, 0.5, {{0, 1}, {0, 1}}));
  f.traces.push_back(trace(0, 1, 0, 0.5, {{0, 1}, {2, 3}}));
  f.traces.push_back(trace(0, 2, 1, 0.5, {{2, 3}, {2, 3}}));
  UsageReport r = analyze_usage(f);
  EXPECT_EQ(r.experts_per_class[0][0], 3.0);
  EXPECT_EQ(r.experts_per_class[1][0], 2.0);
  // class 0 per-token: e0 3/4, e1 3/4, e2 1/4, e3 1/4; class 1: e2 1, e3 1
  EXPECT_EQ(r.layer_frequency[0], (std::vector<double>{0.375, 0.375, 0.625, 0.625}));
}

TEST(AnalyzeUsage, Errors) {
  EXPECT_THROW(analyze_usage(TraceFile{4, 2, {}}), std::invalid_argument);
  TraceFile wrong_k{4, 2, {trace(0, 0, 0, 0.5, {{1}})}};
  EXPECT_THROW(analyze_usage(wrong_k), std::invalid_argument);
  TraceFile out_of_range{4, 1, {trace(0, 0, 0, 0.5, {{4}})}};
  EXPECT_THROW(analyze_usage(out_of_range), std::invalid_argument);
}

TEST(Traces, RoundTrip) {
  TraceFile f = random_file(3, 2, 3, 5);
  f.traces[1].timestep = 0.1234567890123;
  f.traces[2].step = 77;
  std::stringstream s;
  write_traces(s, f);
  TraceFile back = read_traces(s);
  EXPECT_EQ(back.num_experts, 16u);
  EXPECT_EQ(back.top_k, 2u);
  ASSERT_EQ(back.traces.size(), f.traces.size());
  for (std::size_t i = 0; i < f.traces.size(); ++i) {
    EXPECT_EQ(back.traces[i].step, f.traces[i].step);
    EXPECT_EQ(back.traces[i].layer, f.traces[i].layer);
    EXPECT_EQ(back.traces[i].image, f.traces[i].image);
    EXPECT_EQ(back.traces[i].class_label, f.traces[i].class_label);
    EXPECT_EQ(back.traces[i].timestep, f.traces[i].timestep);
    EXPECT_EQ(back.traces[i].selected, f.traces[i].selected);
  }
  std::stringstream again;
  write_traces(again, back);
  EXPECT_EQ(again.str(), s.str());
}

TEST(Traces, RejectsMalformed) {
  std::stringstream no_header("step,layer,image,class,timestep,token,experts\n");
  EXPECT_THROW(read_traces(no_header), std::runtime_error);
}

TEST(Traces, FromForwardSplitsBatch) {
  LayerRouting lr;
  lr.moe_layer = 1;
  lr.selected = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};  // 2 images x 2 tokens
  std::vector<std::size_t> ids{10, 11};
  std::vector<int> labels{4, 5};
  std::vector<double> t{0.9, 0.8};
  auto traces = traces_from_forward({lr}, 3, ids, labels, t);
  ASSERT_EQ(traces.size(), 2u);
  EXPECT_EQ(traces[1].image, 11u);
  EXPECT_EQ(traces[1].class_label, 5);
  EXPECT_EQ(traces[1].timestep, 0.8);
  EXPECT_EQ(traces[1].layer, 1u);
  EXPECT_EQ(traces[1].step, 3u);
  EXPECT_EQ(traces[1].selected, (std::vector<std::vector<std::size_t>>{{2, 3}, {3, 0}}));
}

TEST(Report, CsvsAreDocumentedAndReproducible) {
  TraceFile f = random_file(9, 2, 6, 8);
  auto dir = std::filesystem::temp_directory_path() / "dsmoe_test_analytics";
  std::filesystem::remove_all(dir);
  auto trace_path = dir / "traces.csv";
  std::filesystem::create_directories(dir);
  write_traces(trace_path, f);

  write_usage_report(analyze_usage(read_traces(trace_path)), dir / "a");
  write_usage_report(analyze_usage(read_traces(trace_path)), dir / "b");
  for (const char* name : {"experts_per_class.csv", "expert_frequency.csv", "unused_experts.csv"}) {
    const std::string a = slurp(dir / "a" / name);
    EXPECT_FALSE(a.empty()) << name;
    EXPECT_EQ(a, slurp(dir / "b" / name)) << name;
  }
  EXPECT_EQ(slurp(dir / "a" / "experts_per_class.csv").front(), '#');
  EXPECT_EQ(slurp(dir / "a" / "expert_frequency.csv").front(), '#');
}

TEST(Ppm, ByteLayout) {
  // 1x2 RGB image; channel-major input
  std::vector<double> img{-1.0, 1.0, 0.0, 0.5, 2.0, -3.0};
  auto bytes = encode_ppm(img, 3, 1, 2);
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  std::vector<std::uint8_t> px(bytes.begin() + static_cast<long>(header.size()), bytes.end());
  EXPECT_EQ(px, (std::vector<std::uint8_t>{0, 128, 255, 255, 191, 0}));

  auto grey = encode_ppm(std::vector<double>{0.0}, 1, 1, 1);
  EXPECT_EQ(std::vector<std::uint8_t>(grey.end() - 3, grey.end()), (std::vector<std::uint8_t>{128, 128, 128}));
}
