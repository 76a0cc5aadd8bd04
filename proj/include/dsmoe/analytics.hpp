#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dsmoe/dit.hpp"

namespace dsmoe {

// Routing of one image's tokens through one MoE layer at one model
// evaluation (a training step or one ODE evaluation while sampling).
struct RoutingTrace {
  std::uint64_t step = 0;
  std::size_t layer = 0;  // MoE layer ordinal
  std::size_t image = 0;
  int class_label = 0;
  double timestep = 0.0;
  std::vector<std::vector<std::size_t>> selected;  // per token
};

// Splits the per-layer routing of a batched forward into per-image traces.
std::vector<RoutingTrace> traces_from_forward(const std::vector<LayerRouting>& routing, std::uint64_t step,
                                              std::span<const std::size_t> image_ids, std::span<const int> labels,
                                              std::span<const double> t);

struct TraceFile {
  std::size_t num_experts = 0;
  std::size_t top_k = 0;
  std::vector<RoutingTrace> traces;
};

void write_traces(std::ostream& out, const TraceFile& file);
TraceFile read_traces(std::istream& in);
void write_traces(const std::filesystem::path& path, const TraceFile& file);
TraceFile read_traces(const std::filesystem::path& path);

struct UsageReport {
  std::size_t num_layers = 0;
  std::size_t num_experts = 0;
  std::size_t top_k = 0;
  std::vector<int> classes;                             // ascending
  std::vector<std::vector<double>> experts_per_class;   // [class][layer]
  std::vector<std::vector<double>> layer_frequency;     // [layer][expert]
  std::vector<std::size_t> unused_experts;              // zero frequency in every layer
};

UsageReport analyze_usage(const TraceFile& file);

// Both CSVs carry their aggregation rule in a leading '#' comment line.
std::string experts_per_class_csv(const UsageReport& report);
std::string layer_frequency_csv(const UsageReport& report);
void write_usage_report(const UsageReport& report, const std::filesystem::path& dir);

// Binary P6 PPM, 8-bit, values in [-1,1] mapped linearly onto [0,255].
// image: [C,H,W]; one channel is replicated to grey, extra channels beyond
// three are dropped.
std::vector<std::uint8_t> encode_ppm(std::span<const double> image, std::size_t channels, std::size_t height,
                                     std::size_t width);
void write_ppm(const std::filesystem::path& path, std::span<const double> image, std::size_t channels,
               std::size_t height, std::size_t width);

}  // namespace dsmoe
