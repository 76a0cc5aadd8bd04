#include "dsmoe/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace dsmoe {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<RoutingTrace> traces_from_forward(const std::vector<LayerRouting>& routing, std::uint64_t step,
                                              std::span<const std::size_t> image_ids, std::span<const int> labels,
                                              std::span<const double> t) {
  std::vector<RoutingTrace> out;
  const std::size_t batch = image_ids.size();
  if (labels.size() != batch || t.size() != batch) throw std::invalid_argument("traces_from_forward: batch mismatch");
  for (const auto& layer : routing) {
    if (batch == 0 || layer.selected.size() % batch != 0) {
      throw std::invalid_argument("traces_from_forward: token count not a multiple of batch");
    }
    const std::size_t tokens = layer.selected.size() / batch;
    for (std::size_t b = 0; b < batch; ++b) {
      RoutingTrace tr;
      tr.step = step;
      tr.layer = layer.moe_layer;
      tr.image = image_ids[b];
      tr.class_label = labels[b];
      tr.timestep = t[b];
      tr.selected.assign(layer.selected.begin() + static_cast<long>(b * tokens),
                         layer.selected.begin() + static_cast<long>((b + 1) * tokens));
      out.push_back(std::move(tr));
    }
  }
  return out;
}

void write_traces(std::ostream& out, const TraceFile& file) {
  out << "# num_experts=" << file.num_experts << " top_k=" << file.top_k << '\n';
  out << "step,layer,image,class,timestep,token,experts\n";
  for (const auto& tr : file.traces) {
    for (std::size_t tok = 0; tok < tr.selected.size(); ++tok) {
      out << tr.step << ',' << tr.layer << ',' << tr.image << ',' << tr.class_label << ',' << fmt(tr.timestep) << ','
          << tok << ',';
      for (std::size_t i = 0; i < tr.selected[tok].size(); ++i) out << (i ? " " : "") << tr.selected[tok][i];
      out << '\n';
    }
  }
}

TraceFile read_traces(std::istream& in) {
  TraceFile f;
  std::string line;
  if (!std::getline(in, line) ||
      std::sscanf(line.c_str(), "# num_experts=%zu top_k=%zu", &f.num_experts, &f.top_k) != 2) {
    throw std::runtime_error("trace file: missing '# num_experts=N top_k=K' line");
  }
  if (!std::getline(in, line) || line != "step,layer,image,class,timestep,token,experts") {
    throw std::runtime_error("trace file: unexpected header");
  }
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field[7];
    for (int i = 0; i < 7; ++i) {
      if (!std::getline(ls, field[i], i < 6 ? ',' : '\n')) {
        throw std::runtime_error("trace file: malformed line " + std::to_string(lineno));
      }
    }
    RoutingTrace key;
    std::size_t token = 0;
    try {
      key.step = std::stoull(field[0]);
      key.layer = std::stoul(field[1]);
      key.image = std::stoul(field[2]);
      key.class_label = std::stoi(field[3]);
      key.timestep = std::stod(field[4]);
      token = std::stoul(field[5]);
    } catch (const std::exception&) {
      throw std::runtime_error("trace file: bad number on line " + std::to_string(lineno));
    }
    std::vector<std::size_t> experts;
    std::istringstream es(field[6]);
    std::size_t e = 0;
    while (es >> e) experts.push_back(e);
    const bool same = !f.traces.empty() && f.traces.back().step == key.step && f.traces.back().layer == key.layer &&
                      f.traces.back().image == key.image;
    if (!same) {
      if (token != 0) throw std::runtime_error("trace file: trace must start at token 0, line " + std::to_string(lineno));
      f.traces.push_back(std::move(key));
    } else if (token != f.traces.back().selected.size()) {
      throw std::runtime_error("trace file: tokens out of order on line " + std::to_string(lineno));
    }
    f.traces.back().selected.push_back(std::move(experts));
  }
  return f;
}

void write_traces(const std::filesystem::path& path, const TraceFile& file) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path.string() + "'");
  write_traces(out, file);
}

TraceFile read_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace file '" + path.string() + "'");
  return read_traces(in);
}

UsageReport analyze_usage(const TraceFile& file) {
  if (file.traces.empty()) throw std::invalid_argument("analyze_usage: no traces");
  if (file.num_experts == 0 || file.top_k == 0) throw std::invalid_argument("analyze_usage: missing expert counts");
  UsageReport r;
  r.num_experts = file.num_experts;
  r.top_k = file.top_k;
  std::set<int> classes;
  for (const auto& tr : file.traces) {
    classes.insert(tr.class_label);
    r.num_layers = std::max(r.num_layers, tr.layer + 1);
    for (const auto& sel : tr.selected) {
      if (sel.size() != file.top_k) {
        throw std::invalid_argument("analyze_usage: token with " + std::to_string(sel.size()) +
                                    " experts, expected " + std::to_string(file.top_k));
      }
      for (std::size_t e : sel)
        if (e >= file.num_experts) throw std::invalid_argument("analyze_usage: expert index out of range");
    }
  }
  r.classes.assign(classes.begin(), classes.end());
  std::map<int, std::size_t> class_row;
  for (std::size_t i = 0; i < r.classes.size(); ++i) class_row[r.classes[i]] = i;

  const std::size_t nc = r.classes.size(), nl = r.num_layers, ne = r.num_experts;
  std::vector<std::vector<double>> distinct_sum(nc, std::vector<double>(nl, 0.0));
  std::vector<std::vector<double>> trace_count(nc, std::vector<double>(nl, 0.0));
  std::vector<std::vector<std::vector<double>>> hits(nc, std::vector<std::vector<double>>(nl, std::vector<double>(ne, 0.0)));
  std::vector<std::vector<double>> tokens(nc, std::vector<double>(nl, 0.0));

  for (const auto& tr : file.traces) {
    const std::size_t c = class_row[tr.class_label];
    std::vector<bool> used(ne, false);
    for (const auto& sel : tr.selected)
      for (std::size_t e : sel) {
        used[e] = true;
        hits[c][tr.layer][e] += 1.0;
      }
    distinct_sum[c][tr.layer] += static_cast<double>(std::count(used.begin(), used.end(), true));
    trace_count[c][tr.layer] += 1.0;
    tokens[c][tr.layer] += static_cast<double>(tr.selected.size());
  }

  r.experts_per_class.assign(nc, std::vector<double>(nl, 0.0));
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t l = 0; l < nl; ++l)
      if (trace_count[c][l] > 0) r.experts_per_class[c][l] = distinct_sum[c][l] / trace_count[c][l];

  r.layer_frequency.assign(nl, std::vector<double>(ne, 0.0));
  for (std::size_t l = 0; l < nl; ++l) {
    std::size_t contributing = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      if (tokens[c][l] == 0) continue;
      ++contributing;
      for (std::size_t e = 0; e < ne; ++e) r.layer_frequency[l][e] += hits[c][l][e] / tokens[c][l];
    }
    if (contributing)
      for (double& f : r.layer_frequency[l]) f /= static_cast<double>(contributing);
  }

  for (std::size_t e = 0; e < ne; ++e) {
    bool unused = true;
    for (std::size_t l = 0; l < nl; ++l) unused = unused && r.layer_frequency[l][e] == 0.0;
    if (unused) r.unused_experts.push_back(e);
  }
  return r;
}

std::string experts_per_class_csv(const UsageReport& r) {
  std::ostringstream os;
  os << "# mean distinct experts per image: each trace (one image, one MoE layer, one model evaluation) counts the"
        " distinct experts its tokens selected; values average those counts over the class's traces\n";
  os << "class";
  for (std::size_t l = 0; l < r.num_layers; ++l) os << ",moe_layer_" << l;
  os << '\n';
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    os << r.classes[c];
    for (double v : r.experts_per_class[c]) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

std::string layer_frequency_csv(const UsageReport& r) {
  std::ostringstream os;
  os << "# per-layer expert activation frequency averaged over classes; per-token normalization: an expert's"
        " selections divided by the class's token count, so each row sums to top_k="
     << r.top_k << '\n';
  os << "moe_layer";
  for (std::size_t e = 0; e < r.num_experts; ++e) os << ",expert_" << e;
  os << '\n';
  for (std::size_t l = 0; l < r.num_layers; ++l) {
    os << l;
    for (double v : r.layer_frequency[l]) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

void write_usage_report(const UsageReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto dump = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
    out << text;
  };
  dump("experts_per_class.csv", experts_per_class_csv(report));
  dump("expert_frequency.csv", layer_frequency_csv(report));
  std::string flags = "unused_expert\n";
  for (std::size_t e : report.unused_experts) flags += std::to_string(e) + "\n";
  dump("unused_experts.csv", flags);
}

std::vector<std::uint8_t> encode_ppm(std::span<const double> image, std::size_t channels, std::size_t height,
                                     std::size_t width) {
  if (channels == 0 || image.size() != channels * height * width) {
    throw std::invalid_argument("encode_ppm: image size does not match extents");
  }
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = channels >= 3 ? c : (channels == 1 ? 0 : std::min(c, channels - 1));
        const double v = std::clamp(image[(src * height + y) * width + x], -1.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5)));
      }
  return out;
}

void write_ppm(const std::filesystem::path& path, std::span<const double> image, std::size_t channels,
               std::size_t height, std::size_t width) {
  const auto bytes = encode_ppm(image, channels, height, width);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dsmoe
