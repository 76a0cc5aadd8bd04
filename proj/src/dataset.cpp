#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsmoe/train.hpp"

namespace dsmoe {

SyntheticDataset::SyntheticDataset(std::size_t num_classes, std::size_t channels, std::size_t height,
                                   std::size_t width, std::uint64_t seed)
    : num_classes_(num_classes), channels_(channels), height_(height), width_(width), seed_(seed) {
  if (num_classes == 0 || channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("synthetic dataset: extents must be positive");
  }
}

std::vector<double> SyntheticDataset::image(std::size_t cls, std::uint64_t index) const {
  if (cls >= num_classes_) throw std::out_of_range("synthetic dataset: class " + std::to_string(cls) + " out of range");
  constexpr double pi = std::numbers::pi;
  Rng rng(mix_seed(seed_, cls, index));
  const double k = static_cast<double>(cls);
  const double nc = static_cast<double>(num_classes_);
  const double freq = 1.0 + static_cast<double>(cls % 3);
  const double theta = pi * k / nc;
  const double phase = 2.0 * pi * rng.uniform();
  const double ct = std::cos(theta), st = std::sin(theta);

  std::vector<double> img(image_size());
  for (std::size_t c = 0; c < channels_; ++c) {
    const double tint = 0.5 + 0.5 * std::cos(2.0 * pi * (k / nc + static_cast<double>(c) / static_cast<double>(channels_)));
    const double amp = 0.8 * (0.4 + 0.6 * tint);
    for (std::size_t y = 0; y < height_; ++y)
      for (std::size_t x = 0; x < width_; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width_);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height_);
        const double wave = std::sin(2.0 * pi * freq * (u * ct + v * st) + phase);
        const double val = amp * wave + 0.05 * rng.normal();
        img[(c * height_ + y) * width_ + x] = std::clamp(val, -1.0, 1.0);
      }
  }
  return img;
}

}  // namespace dsmoe
