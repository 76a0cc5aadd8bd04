#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dsmoe/train.hpp"

namespace dsmoe {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'M', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { buf.insert(buf.end(), s.begin(), s.end()); }
  void name(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void section(const Writer& body) {
    u64(body.buf.size());
    buf.insert(buf.end(), body.buf.begin(), body.buf.end());
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[i]) << (8 * i);
    p_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  std::string name() { return bytes(u32()); }
  Reader section(const std::string& what) {
    const std::uint64_t n = u64();
    need(n);
    Reader r(p_, n, what);
    p_ += n;
    return r;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
  void finish() const {
    if (p_ != end_) throw CheckpointError("corrupt checkpoint: trailing bytes in " + what_);
  }
  // Guards counts read from the file before allocating.
  void need(std::uint64_t n) const {
    if (n > remaining()) throw CheckpointError("corrupt checkpoint: truncated " + what_);
  }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
  std::string what_;
};

void write_table(Writer& w, const ParamTable& t) {
  w.u64(t.size());
  for (const auto& [name, values] : t) {
    w.name(name);
    w.u64(values.size());
    for (double v : values) w.f64(v);
  }
}

ParamTable read_table(Reader& r, bool to_end = true) {
  ParamTable t;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.name();
    const std::uint64_t len = r.u64();
    r.need(len * 8);
    std::vector<double> v(len);
    for (auto& x : v) x = r.f64();
    t.emplace(std::move(name), std::move(v));
  }
  if (to_end) r.finish();
  return t;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& b) {
  Writer out;
  out.bytes(std::string(kMagic, 4));
  out.u32(b.version);

  Writer config;
  config.bytes(b.config_text);
  out.section(config);

  Writer weights;
  weights.u64(b.weights.size());
  for (const auto& a : b.weights) {
    weights.name(a.name);
    weights.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) weights.u64(d);
    for (double v : a.values) weights.f64(v);
  }
  out.section(weights);

  Writer optim;
  optim.u64(b.step);
  write_table(optim, b.adam_m);
  write_table(optim, b.adam_v);
  out.section(optim);

  Writer ema;
  write_table(ema, b.ema);
  out.section(ema);

  Writer rng;
  rng.bytes(b.rng_state);
  out.section(rng);
  return out.buf;
}

CheckpointBundle deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes.data(), bytes.size(), "header");
  if (r.remaining() < 8 || r.bytes(4) != std::string(kMagic, 4)) {
    throw CheckpointError("corrupt checkpoint: missing DSMK magic");
  }
  CheckpointBundle b;
  b.version = r.u32();
  if (b.version != CheckpointBundle::kVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(b.version) + " not supported (expected " +
                          std::to_string(CheckpointBundle::kVersion) + ")");
  }
  {
    Reader s = r.section("config section");
    b.config_text = s.bytes(s.remaining());
  }
  {
    Reader s = r.section("weights section");
    const std::uint64_t n = s.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      NamedArray a;
      a.name = s.name();
      const std::uint32_t rank = s.u32();
      s.need(static_cast<std::uint64_t>(rank) * 8);
      std::uint64_t count = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        const std::uint64_t d = s.u64();
        if (d == 0 || d > s.remaining()) throw CheckpointError("corrupt checkpoint: bad extent in '" + a.name + "'");
        a.shape.push_back(d);
        count *= d;
        s.need(count * 8);
      }
      a.values.resize(count);
      for (auto& v : a.values) v = s.f64();
      b.weights.push_back(std::move(a));
    }
    s.finish();
  }
  {
    Reader s = r.section("optimizer section");
    b.step = s.u64();
    b.adam_m = read_table(s, /*to_end=*/false);
    b.adam_v = read_table(s);
  }
  {
    Reader s = r.section("EMA section");
    b.ema = read_table(s);
  }
  {
    Reader s = r.section("RNG section");
    b.rng_state = s.bytes(s.remaining());
  }
  r.finish();
  return b;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dsmoe
