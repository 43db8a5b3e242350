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

#ifndef QUANTKIT_TESTS_TEST_SUPPORT_HPP
#define QUANTKIT_TESTS_TEST_SUPPORT_HPP

// Random graphs, inputs and quantization configs shared by the unit and acceptance tests.

#include "quantkit/calibration.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/int_executor.hpp"
#include "quantkit/models.hpp"

#include <random>
#include <string>
#include <vector>

namespace qk_test
{

using namespace quantkit;

inline Tensor random_tensor(Shape shape, std::mt19937_64 &rng, double sd = 1.0, double mean = 0.0)
{
  std::normal_distribution<double> d(mean, sd);
  Tensor t(std::move(shape));
  for (auto &v : t.data())
    v = d(rng);
  return t;
}

inline int pick(std::mt19937_64 &rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline bool coin(std::mt19937_64 &rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

/// Random BN with positive variance; gamma may be negative when `allow_negative`.
inline Layer random_bn(const std::string &name, std::size_t input, std::size_t c, std::mt19937_64 &rng,
                       bool allow_negative = false)
{
  std::uniform_real_distribution<double> u(0.5, 2.0), m(-1.0, 1.0);
  Layer bn = models::simple_layer(LayerKind::BatchNorm, name, {input});
  bn.gamma = Tensor({c});
  bn.beta = Tensor({c});
  bn.mean = Tensor({c});
  bn.var = Tensor({c});
  for (std::size_t i = 0; i < c; ++i)
  {
    bn.gamma[i] = u(rng) * (allow_negative && coin(rng, 0.3) ? -1.0 : 1.0);
    bn.beta[i] = m(rng);
    bn.mean[i] = m(rng);
    bn.var[i] = u(rng);
  }
  return bn;
}

struct GraphBuilder
{
  Graph g;
  std::mt19937_64 &rng;
  int counter = 0;

  std::string fresh(const std::string &p) { return p + std::to_string(++counter); }

  std::size_t push(Layer l)
  {
    g.layers.push_back(std::move(l));
    return g.layers.size();
  }

  /// Random small bias so activations are not centred exactly at zero.
  void jitter_bias(Layer &l)
  {
    for (auto &b : l.bias.data())
      b = std::normal_distribution<double>(0.0, 0.2)(rng);
  }

  std::size_t activation(std::size_t v, std::size_t channels, bool allow_none = true)
  {
    const int a = pick(rng, allow_none ? 0 : 1, 2);
    if (a == 0)
      return v;
    Layer l = models::simple_layer(a == 1 ? LayerKind::ReLU : LayerKind::ReLU6, fresh("act"), {v});
    if (a == 2 && coin(rng))
    {
      l.clip.resize(channels);
      for (auto &c : l.clip)
        c = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    }
    return push(std::move(l));
  }

  std::size_t mac(Layer l, bool with_bn, std::size_t channels)
  {
    jitter_bias(l);
    std::size_t v = push(std::move(l));
    if (with_bn)
      v = push(random_bn(fresh("bn"), v, channels, rng));
    return v;
  }
};

/// Random MLP with optional residual adds, concats and BN layers.
inline Graph random_mlp(std::mt19937_64 &rng, bool with_bn = false)
{
  GraphBuilder b{Graph{}, rng};
  std::size_t width = static_cast<std::size_t>(pick(rng, 2, 8));
  b.g.input_shape = {width};
  std::size_t v = 0;
  const int blocks = pick(rng, 1, 4);
  for (int i = 0; i < blocks; ++i)
  {
    const int kind = pick(rng, 0, 2);
    if (kind == 0 || v == 0)
    {
      const auto out = static_cast<std::size_t>(pick(rng, 2, 10));
      v = b.mac(models::linear_layer(b.fresh("fc"), v, width, out, rng), with_bn && coin(rng), out);
      v = b.activation(v, out);
      width = out;
    }
    else if (kind == 1)
    {
      std::size_t u = b.mac(models::linear_layer(b.fresh("res"), v, width, width, rng), with_bn && coin(rng), width);
      u = b.activation(u, width);
      Layer add = models::simple_layer(LayerKind::Add, b.fresh("add"), {v, u});
      v = b.push(std::move(add));
      if (coin(rng))
        v = b.activation(v, width, false);
    }
    else
    {
      const auto w1 = static_cast<std::size_t>(pick(rng, 1, 6)), w2 = static_cast<std::size_t>(pick(rng, 1, 6));
      std::size_t p = b.activation(b.mac(models::linear_layer(b.fresh("br"), v, width, w1, rng), false, w1), w1);
      std::size_t q = b.activation(b.mac(models::linear_layer(b.fresh("br"), v, width, w2, rng), false, w2), w2);
      v = b.push(models::simple_layer(LayerKind::Concat, b.fresh("cat"), {p, q}));
      width = w1 + w2;
    }
  }
  const auto out = static_cast<std::size_t>(pick(rng, 1, 4));
  b.mac(models::linear_layer(b.fresh("head"), v, width, out, rng), false, out);
  validate(b.g);
  return b.g;
}

/// Random small CNN: convolutions, depthwise, pooling, residual add, concat, flatten, linear.
inline Graph random_cnn(std::mt19937_64 &rng, bool with_bn = false)
{
  GraphBuilder b{Graph{}, rng};
  std::size_t c = static_cast<std::size_t>(pick(rng, 1, 3));
  std::size_t hw = static_cast<std::size_t>(pick(rng, 4, 8));
  b.g.input_shape = {c, hw, hw};
  std::size_t v = 0;
  const int blocks = pick(rng, 1, 4);
  for (int i = 0; i < blocks; ++i)
  {
    const int kind = pick(rng, 0, 4);
    if (kind == 0 || v == 0)
    {
      const std::size_t k = coin(rng) ? 3 : 1;
      const std::size_t pad = k == 3 && coin(rng, 0.7) ? 1 : 0;
      if (hw + 2 * pad < k)
        continue;
      std::size_t stride = 1;
      if (coin(rng, 0.3) && (hw + 2 * pad - k) % 2 == 0)
        stride = 2;
      const auto out = static_cast<std::size_t>(pick(rng, 1, 6));
      Layer l = models::conv_layer(b.fresh("conv"), v, c, out, k, pad, false, rng);
      l.stride = stride;
      v = b.mac(std::move(l), with_bn && coin(rng), out);
      v = b.activation(v, out);
      c = out;
      hw = (hw + 2 * pad - k) / stride + 1;
    }
    else if (kind == 1)
    {
      v = b.mac(models::conv_layer(b.fresh("dw"), v, c, c, 3, 1, true, rng), with_bn && coin(rng), c);
      v = b.activation(v, c);
    }
    else if (kind == 2 && hw % 2 == 0 && hw >= 2)
    {
      v = b.push(models::simple_layer(coin(rng) ? LayerKind::MaxPool : LayerKind::AvgPool, b.fresh("pool"), {v}));
      hw /= 2;
    }
    else if (kind == 3)
    {
      std::size_t u = b.mac(models::conv_layer(b.fresh("res"), v, c, c, 3, 1, false, rng), with_bn && coin(rng), c);
      u = b.activation(u, c);
      v = b.push(models::simple_layer(LayerKind::Add, b.fresh("add"), {v, u}));
      if (coin(rng))
        v = b.activation(v, c, false);
    }
    else
    {
      const auto c1 = static_cast<std::size_t>(pick(rng, 1, 3)), c2 = static_cast<std::size_t>(pick(rng, 1, 3));
      std::size_t p = b.activation(b.mac(models::conv_layer(b.fresh("br"), v, c, c1, 1, 0, false, rng), false, c1), c1);
      std::size_t q = b.activation(b.mac(models::conv_layer(b.fresh("br"), v, c, c2, 3, 1, false, rng), false, c2), c2);
      v = b.push(models::simple_layer(LayerKind::Concat, b.fresh("cat"), {p, q}));
      c = c1 + c2;
    }
  }
  v = b.push(models::simple_layer(LayerKind::Flatten, b.fresh("flat"), {v}));
  const auto out = static_cast<std::size_t>(pick(rng, 1, 4));
  b.mac(models::linear_layer(b.fresh("head"), v, c * hw * hw, out, rng), false, out);
  validate(b.g);
  return b.g;
}

inline Graph random_graph(std::mt19937_64 &rng, bool with_bn = false)
{
  return coin(rng) ? random_mlp(rng, with_bn) : random_cnn(rng, with_bn);
}

inline Tensor random_input(const Graph &g, std::size_t n, std::mt19937_64 &rng)
{
  Shape s{n};
  s.insert(s.end(), g.input_shape.begin(), g.input_shape.end());
  return random_tensor(s, rng);
}

inline Scheme random_scheme(std::mt19937_64 &rng, bool weight)
{
  static const Scheme w[] = {Scheme::SymmetricSigned, Scheme::AsymmetricUnsigned, Scheme::PowerOfTwoSigned};
  static const Scheme a[] = {Scheme::AsymmetricUnsigned, Scheme::SymmetricUnsigned, Scheme::SymmetricSigned,
                             Scheme::PowerOfTwoSigned};
  return weight ? w[pick(rng, 0, 2)] : a[pick(rng, 0, 3)];
}

/// Random quantizer configuration with fitted specs on a BN-free graph; frozen for integer execution by default.
inline Graph random_quantized(const Graph &fp, std::mt19937_64 &rng, const Tensor &calib, bool freeze = true)
{
  QuantConfig qc;
  qc.weight_scheme = random_scheme(rng, true);
  qc.act_scheme = random_scheme(rng, false);
  qc.weight_bits = pick(rng, 2, 8);
  qc.act_bits = pick(rng, 2, 8);
  qc.weight_granularity = coin(rng) ? Granularity::PerChannel : Granularity::PerTensor;
  qc.tied_add = coin(rng);
  Graph g = fp;
  for (auto &l : g.layers)
    if (l.kind == LayerKind::Add)
      l.tied = qc.tied_add;
  g = attach_quantizers(g, qc);
  fit_weight_quantizers(g, coin(rng) ? RangeMethod::MSE : RangeMethod::MinMax);
  fit_activation_quantizers(g, calib, coin(rng) ? ActRangeMethod::MSE : ActRangeMethod::MinMax);
  return freeze ? freeze_for_integer(g) : g;
}

/// Largest |a-b| relative to the largest |b| (or 1 when b is tiny).
inline double rel_error(const Tensor &a, const Tensor &b)
{
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
  {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1e-12);
}

} // namespace qk_test

#endif // QUANTKIT_TESTS_TEST_SUPPORT_HPP
