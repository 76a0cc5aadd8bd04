#include <cmath>

#include "dsmoe/train.hpp"

namespace dsmoe {

void AdamW::step(std::vector<NamedParam>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto w = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
    }
  }
}

void AdamW::restore(std::uint64_t steps, ParamTable m, ParamTable v) {
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

Ema::Ema(const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    auto v = p.tensor.values();
    shadow_[p.name].assign(v.begin(), v.end());
  }
}

void Ema::update(const std::vector<NamedParam>& params, double decay) {
  for (const auto& p : params) {
    auto& s = shadow_[p.name];
    auto w = p.tensor.values();
    if (s.size() != w.size()) s.assign(w.begin(), w.end());
    for (std::size_t i = 0; i < w.size(); ++i) s[i] = decay * s[i] + (1.0 - decay) * w[i];
  }
}

}  // namespace dsmoe
