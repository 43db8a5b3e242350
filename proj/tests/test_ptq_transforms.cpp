/*
 * Copyright (c) 2026 The quantkit Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "quantkit/ptq_transforms.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace quantkit;
using qk_test::random_tensor;

namespace
{

// fc1 -> act -> fc2 with random weights and per-channel imbalance.
Graph pair_graph(std::mt19937_64 &rng, LayerKind act = LayerKind::ReLU, std::size_t width = 6)
{
  Graph g = models::mlp(5, {width}, 3, rng(), act);
  std::uniform_real_distribution<double> e(-1.0, 1.0);
  std::vector<double> f(width);
  for (auto &v : f)
    v = std::pow(10.0, e(rng));
  scale_output_channels(g.layers[0], f);
  for (std::size_t i = 0; i < width; ++i)
    g.layers[0].bias[i] = 0.1 * e(rng);
  return g;
}

std::vector<double> paired_ratio(const Graph &g, std::size_t a, std::size_t b)
{
  const auto r1 = input_channel_ranges(g.layers[b]), r0 = output_channel_ranges(g.layers[a]);
  std::vector<double> d;
  for (std::size_t i = 0; i < r0.size(); ++i)
    d.push_back(r0[i] / r1[i]);
  return d;
}

} // namespace

TEST(CleScales, formula)
{
  const std::vector<double> r1{1.0, 4.0, 9.0, 0.0}, r2{1.0, 1.0, 4.0, 2.0};
  const auto s = cle_scales(r1, r2);
  EXPECT_EQ(s, (std::vector<double>{1.0, 2.0, 1.5, 1.0}));
  // equalized ranges r1/s and r2*s
  EXPECT_EQ(r1[1] / s[1], 2.0);
  EXPECT_EQ(r2[1] * s[1], 2.0);
  EXPECT_EQ(r1[2] / s[2], 6.0);
  EXPECT_EQ(r2[2] * s[2], 6.0);
}

TEST(CleScales, errors)
{
  const std::vector<double> a{1.0}, b{1.0, 2.0}, neg{-1.0};
  EXPECT_THROW(cle_scales(a, b), ContractError);
  EXPECT_THROW(cle_scales(neg, a), ContractError);
}

TEST(EqualizePair, balanced_pair_is_unchanged)
{
  Graph g = models::mlp(2, {2}, 2, 1);
  g.layers[0].weight = Tensor({2, 2}, {1, -0.5, 0.25, 2});
  g.layers[2].weight = Tensor({2, 2}, {-1, 2, 0.5, 0.1});
  const Graph before = g;
  equalize_pair(g, {0, 2, 1});
  EXPECT_EQ(g.layers[0].weight, before.layers[0].weight);
  EXPECT_EQ(g.layers[2].weight, before.layers[2].weight);
}

TEST(EqualizePair, preserves_function_and_equalizes)
{
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t)
  {
    Graph g = pair_graph(rng);
    const Graph before = g;
    equalize_pair(g, {0, 2, 1});
    const Tensor x = random_tensor({16, 5}, rng);
    EXPECT_LT(qk_test::rel_error(forward_fp(g, x), forward_fp(before, x)), 1e-9);
    const auto r1 = output_channel_ranges(g.layers[0]), r2 = input_channel_ranges(g.layers[2]);
    for (std::size_t i = 0; i < r1.size(); ++i)
      EXPECT_NEAR(r1[i], r2[i], 1e-9 * r1[i]);
  }
}

TEST(EqualizePair, relu6_clip_is_rescaled)
{
  Graph g = models::mlp(1, {1}, 1, 1, LayerKind::ReLU6);
  g.layers[0].weight = Tensor({1, 1}, {4.0});
  g.layers[2].weight = Tensor({1, 1}, {1.0});
  const Graph before = g;
  const auto s = equalize_pair(g, {0, 2, 1});
  ASSERT_EQ(s, std::vector<double>{2.0});
  EXPECT_EQ(g.layers[1].clip, std::vector<double>{3.0});
  for (double x : {-1.0, 0.5, 1.0, 1.5, 2.0, 5.0})
    EXPECT_DOUBLE_EQ(forward_fp(g, Tensor({1, 1}, {x}))[0], forward_fp(before, Tensor({1, 1}, {x}))[0]);
}

TEST(ScalingEquivariance, relu)
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int t = 0; t < 50; ++t)
  {
    const Tensor x = random_tensor({64}, rng);
    const double s = u(rng);
    EXPECT_EQ(ops::relu(ops::scale(x, s)), ops::scale(ops::relu(x), s));
  }
}

TEST(ApplyCle, single_pair_converges_on_second_sweep)
{
  std::mt19937_64 rng(3);
  const auto res = apply_cle(pair_graph(rng));
  EXPECT_EQ(res.record["sweeps"], 2);
  EXPECT_TRUE(res.record["converged"].get<bool>());
}

TEST(ApplyCle, no_eligible_pairs_leaves_graph)
{
  std::mt19937_64 rng(4);
  Graph g;
  g.input_shape = {4};
  g.layers.push_back(models::linear_layer("a", 0, 4, 4, rng));
  g.layers.push_back(models::linear_layer("b", 1, 4, 4, rng));
  g.layers.push_back(models::linear_layer("c", 1, 4, 4, rng));
  g.layers.push_back(models::simple_layer(LayerKind::Add, "add", {2, 3}));
  const auto res = apply_cle(g);
  EXPECT_EQ(res.graph, g);
  EXPECT_EQ(res.record["sweeps"], 0);
}

TEST(ApplyCle, three_layer_chain_reaches_fixpoint)
{
  std::mt19937_64 rng(5);
  Graph g = models::mlp(4, {6, 6}, 3, 9);
  std::uniform_real_distribution<double> e(-1.0, 1.0);
  for (std::size_t k : {0u, 2u})
  {
    std::vector<double> f(6);
    for (auto &v : f)
      v = std::pow(10.0, e(rng));
    scale_output_channels(g.layers[k], f);
  }
  const auto res = apply_cle(g, CleOptions{1e-10, 500});
  ASSERT_TRUE(res.record["converged"].get<bool>());
  for (auto [a, b] : {std::pair<std::size_t, std::size_t>{0, 2}, {2, 4}})
    for (double r : paired_ratio(res.graph, a, b))
      EXPECT_NEAR(r, 1.0, 1e-3);
  const Tensor x = random_tensor({16, 4}, rng);
  EXPECT_LT(qk_test::rel_error(forward_fp(res.graph, x), forward_fp(g, x)), 1e-6);
}

TEST(ApplyCle, rejects_unfolded_bn)
{
  std::mt19937_64 rng(6);
  Graph g = models::mlp(3, {4}, 2, 1);
  g.layers.insert(g.layers.begin() + 1, qk_test::random_bn("bn", 1, 4, rng));
  g.layers[2].inputs = {2};
  g.layers[3].inputs = {3};
  EXPECT_THROW(apply_cle(g), ContractError);
}

TEST(AbsorbBias, bn_constant)
{
  const auto c = absorbable_constant_bn(BnMeta{{1.0, 1.0, 2.0}, {5.0, 2.0, 6.0}});
  EXPECT_EQ(c, (std::vector<double>{2.0, 0.0, 0.0}));
}

TEST(AbsorbBias, zero_constant_leaves_layers)
{
  Graph g = models::mlp(2, {2}, 1, 3);
  g.layers[0].bn_meta = BnMeta{{1.0, 1.0}, {1.0, 3.0}};
  const auto res = absorb_bias(g);
  EXPECT_EQ(res.graph.layers[0].bias, g.layers[0].bias);
  EXPECT_EQ(res.graph.layers[2].bias, g.layers[2].bias);
}

TEST(AbsorbBias, empirical_is_exact_on_calibration)
{
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t)
  {
    Graph g = pair_graph(rng);
    for (std::size_t i = 0; i < 6; ++i)
      g.layers[0].bias[i] = 3.0;
    const Tensor x = random_tensor({32, 5}, rng, 0.3);
    const auto res = absorb_bias(g, &x);
    ASSERT_EQ(res.record["pairs"].size(), 1u);
    EXPECT_LT(qk_test::rel_error(forward_fp(res.graph, x), forward_fp(g, x)), 1e-9);
    // absorbed constant is the per-channel minimum of the pre-activation, floored at 0
    const Tensor pre = ops::linear(x, g.layers[0].weight, g.layers[0].bias);
    for (std::size_t c = 0; c < 6; ++c)
    {
      double m = pre[c];
      for (std::size_t n = 0; n < 32; ++n)
        m = std::min(m, pre[n * 6 + c]);
      EXPECT_DOUBLE_EQ(res.graph.layers[0].bias[c], 3.0 - std::max(0.0, m));
    }
  }
}

TEST(AbsorbBias, needs_metadata_or_data)
{
  std::mt19937_64 rng(8);
  EXPECT_THROW(absorb_bias(pair_graph(rng)), ConfigError);
  EXPECT_TRUE(absorb_bias(pair_graph(rng), nullptr, false).record["skipped"].size() == 1u);
}

TEST(BiasCorrectEmpirical, exact_weights_need_no_correction)
{
  Graph g = models::mlp(2, {2}, 1, 3);
  g.layers[0].weight = Tensor({2, 2}, {0.5, -0.25, 1.0, 0.75});
  g.layers[2].weight = Tensor({1, 2}, {0.25, -0.5});
  Graph q = attach_quantizers(g, QuantConfig{});
  q.slot("fc1.weight").spec = make_spec(Scheme::SymmetricSigned, 8, 0.25);
  q.slot("head.weight").spec = make_spec(Scheme::SymmetricSigned, 8, 0.25);
  std::mt19937_64 rng(9);
  const auto res = bias_correct_empirical(q, random_tensor({16, 2}, rng));
  EXPECT_EQ(res.graph.layers[0].bias, q.layers[0].bias);
  EXPECT_EQ(res.graph.layers[2].bias, q.layers[2].bias);
}

TEST(BiasCorrectEmpirical, hand_two_by_two_with_clipping)
{
  Graph g;
  g.input_shape = {2};
  Layer l = models::simple_layer(LayerKind::Linear, "fc", {0});
  l.weight = Tensor({2, 2}, {0.5, 3.0, -0.25, 0.75});
  l.bias = Tensor({2});
  g.layers.push_back(l);
  Graph q = attach_quantizers(g, QuantConfig{});
  // 3-bit symmetric grid with s=0.25 tops out at 0.75, so w[0][1]=3.0 clips by 2.25.
  q.slot("fc.weight").spec = make_spec(Scheme::SymmetricSigned, 3, 0.25);
  const Tensor x({2, 2}, {1.0, 2.0, 3.0, 0.0}); // mean [2, 1]
  const auto res = bias_correct_empirical(q, x);
  EXPECT_DOUBLE_EQ(res.graph.layers[0].bias[0], 2.25 * 1.0);
  EXPECT_DOUBLE_EQ(res.graph.layers[0].bias[1], 0.0);
}

TEST(BiasCorrectEmpirical, closes_mean_gap)
{
  std::mt19937_64 rng(10);
  for (int t = 0; t < 10; ++t)
  {
    const Graph fp = fold_bn(qk_test::random_graph(rng));
    const Tensor calib = qk_test::random_input(fp, 16, rng);
    const Graph q = qk_test::random_quantized(fp, rng, calib, false);
    const Graph c = bias_correct_empirical(q, calib).graph;
    const auto f = run_graph(fp, ag::Var(calib), ExecMode::FP);
    const auto s = run_graph(weights_only(c), ag::Var(calib), ExecMode::Sim);
    for (std::size_t k = 0; k < fp.layers.size(); ++k)
    {
      if (!is_mac(fp.layers[k].kind))
        continue;
      const auto mf = ops::channel_mean(f.raw[k + 1].value()), mq = ops::channel_mean(s.raw[k + 1].value());
      for (std::size_t ch = 0; ch < mf.size(); ++ch)
        EXPECT_NEAR(mq[ch], mf[ch], 1e-6 * std::max(1.0, std::abs(mf[ch]))) << fp.layers[k].name;
    }
  }
}

TEST(BiasCorrectEmpirical, rejects_empty_calibration)
{
  const Graph q = attach_quantizers(models::mlp(2, {2}, 1, 3), QuantConfig{});
  EXPECT_THROW(bias_correct_empirical(q, Tensor()), ContractError);
}

TEST(BiasCorrectAnalytic, relu_gaussian_mean_values)
{
  EXPECT_NEAR(relu_gaussian_mean(0.0, 1.0), 0.398942, 1e-6);
  EXPECT_NEAR(relu_gaussian_mean(10.0, 1.0), 10.0, 1e-12);
  EXPECT_NEAR(relu_gaussian_mean(-10.0, 1.0), 0.0, 1e-12);
}

TEST(BiasCorrectAnalytic, relu_gaussian_mean_matches_monte_carlo)
{
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (double beta : {-1.0, 0.0, 1.5})
    for (double gamma : {0.5, 2.0})
    {
      double acc = 0.0;
      const int samples = 400000;
      for (int i = 0; i < samples; ++i)
        acc += std::max(0.0, beta + gamma * n(rng));
      EXPECT_NEAR(relu_gaussian_mean(beta, gamma), acc / samples, 1e-2) << beta << " " << gamma;
    }
}

TEST(BiasCorrectAnalytic, clipped_mean_bounds)
{
  EXPECT_NEAR(clipped_gaussian_mean(100.0, 1.0, 6.0), 6.0, 1e-12);
  EXPECT_LT(clipped_gaussian_mean(5.0, 2.0, 6.0), relu_gaussian_mean(5.0, 2.0));
}

TEST(BiasCorrectAnalytic, skips_layers_without_bn_metadata)
{
  std::mt19937_64 rng(12);
  Graph q = attach_quantizers(models::mlp(3, {4}, 2, 1), QuantConfig{});
  fit_weight_quantizers(q, RangeMethod::MinMax);
  const auto res = bias_correct_analytic(q);
  EXPECT_EQ(res.record["layers"].size(), 0u);
  EXPECT_EQ(res.record["skipped"].size(), 2u);
}

TEST(BiasCorrectAnalytic, corrects_by_expected_input)
{
  Graph g = models::mlp(1, {2}, 1, 4);
  g.layers[0].bn_meta = BnMeta{{1.0, 2.0}, {0.0, 1.0}};
  g.layers[2].weight = Tensor({1, 2}, {0.3, 0.6});
  Graph q = attach_quantizers(g, QuantConfig{});
  fit_weight_quantizers(q, RangeMethod::MinMax);
  q.slot("head.weight").spec = make_spec(Scheme::SymmetricSigned, 8, 0.25);
  const auto res = bias_correct_analytic(q);
  // dW = [0.25-0.3, 0.5-0.6]
  const double expect = -(-0.05 * relu_gaussian_mean(0.0, 1.0) + -0.1 * relu_gaussian_mean(1.0, 2.0));
  EXPECT_NEAR(res.graph.layers[2].bias[0] - g.layers[2].bias[0], expect, 1e-12);
}
