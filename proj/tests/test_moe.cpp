#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsmoe/moe.hpp"
#include "test_util.hpp"

using namespace dsmoe;
using dsmoe::testing::max_grad_error;
using dsmoe::testing::probe;
using dsmoe::testing::random_tensor;
using dsmoe::testing::random_values;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> scores_ref(std::span<const double> u, const RouterState& r) {
  const std::size_t n = r.num_routed(), d = u.size();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < d; ++k) z += u[k] * r.centroids.at(i * d + k);
    s[i] = sigmoid_ref(z);
  }
  return s;
}

// Stable sort of every index by s+b, descending, then keep K.
std::vector<std::size_t> topk_ref(std::span<const double> s, std::span<const double> b, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return s[x] + b[x] > s[y] + b[y]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> expert_ref(std::span<const double> u, const ExpertWeights& w) {
  const std::size_t d = u.size(), s = w.gate.dim(1);
  std::vector<double> h(s), out(d, 0.0);
  for (std::size_t j = 0; j < s; ++j) {
    double g = 0, up = 0;
    for (std::size_t k = 0; k < d; ++k) {
      g += u[k] * w.gate.at(k * s + j);
      up += u[k] * w.up.at(k * s + j);
    }
    h[j] = g * sigmoid_ref(g) * up;
  }
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < s; ++j) out[k] += h[j] * w.down.at(j * d + k);
  return out;
}

// Evaluates every routed expert, zero-masks the unselected ones.
std::vector<double> dense_oracle(const Tensor& u, const MoELayer& layer, bool residual) {
  const std::size_t n = u.dim(0), d = u.dim(1), nr = layer.router.num_routed();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    auto ut = u.values().subspan(t * d, d);
    auto s = scores_ref(ut, layer.router);
    auto sel = topk_ref(s, layer.router.biases, layer.config.top_k);
    double z = 0;
    for (auto i : sel) z += s[i];
    for (std::size_t k = 0; k < d; ++k) out[t * d + k] = residual ? ut[k] : 0.0;
    for (const auto& sh : layer.shared) {
      auto y = expert_ref(ut, sh);
      for (std::size_t k = 0; k < d; ++k) out[t * d + k] += y[k];
    }
    for (std::size_t e = 0; e < nr; ++e) {
      const double mask = std::find(sel.begin(), sel.end(), e) != sel.end() ? 1.0 : 0.0;
      auto y = expert_ref(ut, layer.routed[e]);
      for (std::size_t k = 0; k < d; ++k) out[t * d + k] += mask * (s[e] / z) * y[k];
    }
  }
  return out;
}

MoELayer random_layer(std::size_t ns, std::size_t nr, std::size_t k, std::size_t d, std::size_t s, Rng& rng) {
  MoELayer layer = MoELayer::init({ns, nr, k, d, s}, rng, 0.5);
  for (double& b : layer.router.biases) b = 0.2 * (rng.uniform() - 0.5);
  return layer;
}

}  // namespace

TEST(Affinity, OrthogonalTokenGivesHalf) {
  Rng rng(1);
  RouterState r = RouterState::init(3, 4, rng);
  auto c = r.centroids.mutable_values();
  std::fill(c.begin(), c.end(), 0.0);
  c[0] = 1.0;      // e_0 = x axis
  c[4 + 1] = 2.0;  // e_1 = y axis
  c[8 + 2] = 3.0;  // e_2 = z axis
  Tensor u = Tensor::from({4}, {0, 0, 0, 5});
  Tensor s = affinity(u, r);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.at(i), 0.5);
}

TEST(Affinity, TokenEqualToCentroid) {
  Rng rng(2);
  RouterState r = RouterState::init(2, 2, rng);
  auto c = r.centroids.mutable_values();
  c[0] = 2.0;
  c[1] = 0.0;
  Tensor s = affinity(Tensor::from({2}, {2.0, 0.0}), r);
  EXPECT_NEAR(s.at(0), 0.98201, 1e-5);
  EXPECT_NEAR(s.at(0), sigmoid_ref(4.0), 1e-15);
}

TEST(Affinity, MatchesScalarLoop) {
  Rng rng(3);
  RouterState r = RouterState::init(16, 12, rng, 0.5);
  Tensor u = random_tensor({5, 12}, rng, false);
  Tensor s = affinity(u, r);
  ASSERT_EQ(s.shape(), (Shape{5, 16}));
  for (std::size_t t = 0; t < 5; ++t) {
    auto want = scores_ref(u.values().subspan(t * 12, 12), r);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(s.at(t * 16 + i), want[i], 1e-12);
  }
}

TEST(Affinity, WidthMismatchRejected) {
  Rng rng(4);
  RouterState r = RouterState::init(4, 8, rng);
  EXPECT_THROW(affinity(Tensor::zeros({7}), r), ShapeError);
}

TEST(SelectTopk, TieGoesToLowerIndex) {
  const std::vector<double> s{0.9, 0.1, 0.5, 0.5}, b(4, 0.0);
  EXPECT_EQ(select_topk(s, b, 2), (std::vector<std::size_t>{0, 2}));
}

TEST(SelectTopk, BiasChangesSelectionNotGate) {
  const std::vector<double> s{0.6, 0.5}, b{-0.3, 0.0};
  auto sel = select_topk(s, b, 1);
  EXPECT_EQ(sel, (std::vector<std::size_t>{1}));
  auto g = gate_values(s, sel);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0], 1.0);
  // the raw score feeding the gate is s_1 = 0.5, not s_1 + b_1
  EXPECT_EQ(s[sel[0]], 0.5);
}

TEST(SelectTopk, AllExperts) {
  const std::vector<double> s{0.3, 0.9, 0.1}, b(3, 0.0);
  EXPECT_EQ(select_topk(s, b, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SelectTopk, InvalidK) {
  const std::vector<double> s{0.3, 0.9}, b(2, 0.0);
  EXPECT_THROW(select_topk(s, b, 0), std::invalid_argument);
  EXPECT_THROW(select_topk(s, b, 3), std::invalid_argument);
}

TEST(SelectTopk, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(12), k = 1 + rng.uniform_index(n);
    std::vector<double> s(n), b(n);
    // coarse values so ties actually happen
    for (auto& x : s) x = static_cast<double>(rng.uniform_index(5)) / 4.0;
    for (auto& x : b) x = rng.bernoulli(0.5) ? 0.0 : static_cast<double>(rng.uniform_index(3)) / 4.0;
    EXPECT_EQ(select_topk(s, b, k), topk_ref(s, b, k));
  }
}

TEST(GateValues, Arithmetic) {
  const std::vector<double> s{0.5, 0.6, 0.5, 0.2};
  auto g = gate_values(s, std::vector<std::size_t>{0, 2});
  EXPECT_EQ(g, (std::vector<double>{0.5, 0.5}));
  g = gate_values(s, std::vector<std::size_t>{1, 3});
  EXPECT_NEAR(g[0], 0.75, 1e-15);
  EXPECT_NEAR(g[1], 0.25, 1e-15);
  g = gate_values(s, std::vector<std::size_t>{3});
  EXPECT_EQ(g[0], 1.0);
  EXPECT_THROW(gate_values(s, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(ExpertForward, ZeroInputGivesZero) {
  Rng rng(6);
  auto w = ExpertWeights::init(6, 4, rng, 0.5);
  Tensor y = expert_forward(Tensor::zeros({6}), w);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ExpertForward, ScalarCase) {
  ExpertWeights w{Tensor::full({1, 1}, 1.0), Tensor::full({1, 1}, 1.0), Tensor::full({1, 1}, 1.0)};
  Tensor y = expert_forward(Tensor::full({1}, 1.0), w);
  EXPECT_NEAR(y.item(), 0.7311, 1e-4);
  EXPECT_NEAR(y.item(), sigmoid_ref(1.0), 1e-15);
}

TEST(ExpertForward, MatchesScalarLoop) {
  Rng rng(7);
  auto w = ExpertWeights::init(10, 6, rng, 0.5);
  Tensor u = random_tensor({3, 10}, rng, false);
  Tensor y = expert_forward(u, w);
  for (std::size_t t = 0; t < 3; ++t) {
    auto want = expert_ref(u.values().subspan(t * 10, 10), w);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(y.at(t * 10 + k), want[k], 1e-12);
  }
  EXPECT_THROW(expert_forward(Tensor::zeros({9}), w), ShapeError);
}

TEST(MoEForward, ZeroRoutedExpertsLeaveSharedPath) {
  Rng rng(8);
  MoELayer layer = random_layer(1, 4, 2, 6, 5, rng);
  for (auto& e : layer.routed) e = ExpertWeights::zeros(6, 5);
  Tensor u = random_tensor({8, 6}, rng, false);
  Tensor h = moe_forward(u, layer).output;
  Tensor shared = expert_forward(u, layer.shared[0]);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_NEAR(h.at(i), u.at(i) + shared.at(i), 1e-15);
}

TEST(MoEForward, SingleRoutedExpertIsResidualFfn) {
  Rng rng(9);
  MoELayer layer = random_layer(0, 1, 1, 6, 5, rng);
  Tensor u = random_tensor({4, 6}, rng, false);
  Tensor h = moe_forward(u, layer).output;
  Tensor f = expert_forward(u, layer.routed[0]);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_NEAR(h.at(i), u.at(i) + f.at(i), 1e-15);
}

TEST(MoEForward, MatchesDenseOracle) {
  Rng rng(10);
  MoELayer layer = random_layer(1, 4, 2, 6, 5, rng);
  Tensor u = random_tensor({8, 6}, rng, false);
  MoEOutput out = moe_forward(u, layer);
  auto want = dense_oracle(u, layer, true);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.output.at(i), want[i], 1e-12);
  ASSERT_EQ(out.selected.size(), 8u);
  for (std::size_t t = 0; t < 8; ++t) {
    auto s = scores_ref(u.values().subspan(t * 6, 6), layer.router);
    EXPECT_EQ(out.selected[t], topk_ref(s, layer.router.biases, 2));
  }
  MoEOutput ffn = moe_ffn(u, layer);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(ffn.output.at(i) + u.at(i), want[i], 1e-12);
}

TEST(MoEForward, RandomConfigsMatchDenseOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t nr = 1 + rng.uniform_index(8), k = 1 + rng.uniform_index(nr);
    const std::size_t ns = rng.uniform_index(2), tokens = 1 + rng.uniform_index(32);
    MoELayer layer = random_layer(ns, nr, k, 5, 3, rng);
    Tensor u = random_tensor({tokens, 5}, rng, false);
    MoEOutput out = moe_forward(u, layer, false);
    auto want = dense_oracle(u, layer, true);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(out.output.at(i), want[i], 1e-12);
  }
}

TEST(MoEForward, UniformBiasShiftChangesNothing) {
  Rng rng(12);
  MoELayer layer = random_layer(1, 6, 2, 6, 4, rng);
  Tensor u = random_tensor({10, 6}, rng, false);
  MoEOutput a = moe_forward(u, layer, false);
  for (double& b : layer.router.biases) b += 0.375;
  MoEOutput b = moe_forward(u, layer, false);
  EXPECT_EQ(a.selected, b.selected);
  for (std::size_t i = 0; i < a.output.numel(); ++i) EXPECT_EQ(a.output.at(i), b.output.at(i));
}

TEST(MoEForward, RecordsLoad) {
  Rng rng(13);
  MoELayer layer = random_layer(1, 4, 2, 6, 4, rng);
  Tensor u = random_tensor({9, 6}, rng, false);
  MoEOutput out = moe_forward(u, layer, true);
  std::vector<std::uint64_t> want(4, 0);
  for (const auto& sel : out.selected)
    for (auto e : sel) ++want[e];
  EXPECT_EQ(layer.router.window_load, want);
  moe_forward(u, layer, false);
  EXPECT_EQ(layer.router.window_load, want);
}

TEST(MoEForward, GradientsReachOnlySelectedExperts) {
  Rng rng(14);
  MoELayer layer = random_layer(1, 6, 2, 5, 4, rng);
  Tensor u = random_tensor({1, 5}, rng);
  MoEOutput out = moe_forward(u, layer, false);
  probe(out.output).backward();
  const auto& sel = out.selected[0];
  for (std::size_t e = 0; e < 6; ++e) {
    const bool chosen = std::find(sel.begin(), sel.end(), e) != sel.end();
    double mag = 0;
    for (const Tensor* t : {&layer.routed[e].gate, &layer.routed[e].up, &layer.routed[e].down})
      for (double g : t->grad()) mag += std::abs(g);
    if (chosen) {
      EXPECT_GT(mag, 0.0) << "expert " << e;
    } else {
      EXPECT_EQ(mag, 0.0) << "expert " << e;
    }
  }
  double shared = 0, router = 0;
  for (double g : layer.shared[0].down.grad()) shared += std::abs(g);
  for (double g : layer.router.centroids.grad()) router += std::abs(g);
  EXPECT_GT(shared, 0.0);
  EXPECT_GT(router, 0.0);
}

TEST(MoEForward, Gradient) {
  Rng rng(15);
  MoELayer layer = random_layer(1, 4, 2, 4, 3, rng);
  Tensor u = random_tensor({5, 4}, rng);
  std::vector<Tensor> leaves{u, layer.router.centroids, layer.shared[0].gate};
  for (auto& e : layer.routed) leaves.insert(leaves.end(), {e.gate, e.up, e.down});
  // selection is piecewise constant; small steps do not cross a boundary here
  auto loss = [&] { return probe(moe_forward(u, layer, false).output); };
  EXPECT_LT(max_grad_error(loss, leaves), 1e-5);
}

TEST(UpdateBias, BalancedLoadsLeaveBiasesAlone) {
  Rng rng(16);
  RouterState r = RouterState::init(4, 2, rng);
  r.window_load = {5, 5, 5, 5};
  update_bias(r);
  EXPECT_EQ(r.biases, std::vector<double>(4, 0.0));
}

TEST(UpdateBias, SignStepAndReset) {
  Rng rng(17);
  RouterState r = RouterState::init(2, 2, rng);
  r.bias_update_rate = 0.01;
  r.window_load = {10, 0};
  update_bias(r);
  EXPECT_EQ(r.biases, (std::vector<double>{-0.01, 0.01}));
  EXPECT_EQ(r.window_load, (std::vector<std::uint64_t>{0, 0}));
}

TEST(UpdateBias, ReducesLoadSpreadOnSkewedStream) {
  Rng rng(18);
  const std::size_t d = 8, nr = 8, tokens = 64;
  MoELayer layer = MoELayer::init({0, nr, 2, d, 4}, rng, 0.5);
  MoELayer frozen = layer;
  // tokens cluster around centroid 0
  std::vector<double> dominant(layer.router.centroids.values().begin(),
                               layer.router.centroids.values().begin() + d);
  double with_bias = 0, without = 0;
  for (int w = 0; w < 100; ++w) {
    std::vector<double> v(tokens * d);
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t k = 0; k < d; ++k) v[t * d + k] = 3.0 * dominant[k] + 0.3 * rng.normal();
    Tensor u = Tensor::from({tokens, d}, v);
    moe_forward(u, layer, true);
    moe_forward(u, frozen, true);
    if (w >= 50) {
      with_bias += layer.router.window_load_std();
      without += frozen.router.window_load_std();
    }
    update_bias(layer.router);
    frozen.router.reset_window();
  }
  EXPECT_LT(with_bias, 0.5 * without);
}

TEST(MoEConfig, Violations) {
  EXPECT_TRUE((MoEConfig{1, 16, 2, 8, 8}).violations().empty());
  EXPECT_FALSE((MoEConfig{1, 16, 17, 8, 8}).violations().empty());
  EXPECT_FALSE((MoEConfig{1, 16, 0, 8, 8}).violations().empty());
  EXPECT_FALSE((MoEConfig{2, 16, 2, 8, 8}).violations().empty());
}
