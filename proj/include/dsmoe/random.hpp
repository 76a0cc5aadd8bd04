#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dsmoe {

// Seeded generator whose complete state is the engine state (normals are
// drawn without a cached spare), so it serializes and resumes exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Stable 64-bit mixing of several integers into one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace dsmoe
