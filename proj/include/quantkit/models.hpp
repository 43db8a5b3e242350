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

#ifndef QUANTKIT_MODELS_HPP
#define QUANTKIT_MODELS_HPP

#include "quantkit/autograd.hpp"
#include "quantkit/datasets.hpp"
#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/serialization.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

// Builders and a float trainer for the toy models used by the tests and `quantkit generate`.

namespace quantkit::models
{

namespace detail
{

inline Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64 &rng)
{
  std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto &v : t.data())
    v = d(rng);
  return t;
}

inline std::size_t add_layer(Graph &g, Layer l)
{
  g.layers.push_back(std::move(l));
  return g.layers.size();
}

} // namespace detail

inline Layer linear_layer(std::string name, std::size_t input, std::size_t in, std::size_t out, std::mt19937_64 &rng)
{
  Layer l;
  l.kind = LayerKind::Linear;
  l.name = std::move(name);
  l.inputs = {input};
  l.weight = detail::he_normal({out, in}, in, rng);
  l.bias = Tensor({out});
  return l;
}

inline Layer conv_layer(std::string name, std::size_t input, std::size_t cin, std::size_t cout, std::size_t k,
                        std::size_t pad, bool depthwise, std::mt19937_64 &rng)
{
  Layer l;
  l.kind = depthwise ? LayerKind::DepthwiseConv2d : LayerKind::Conv2d;
  l.name = std::move(name);
  l.inputs = {input};
  l.padding = pad;
  const std::size_t per = depthwise ? 1 : cin;
  l.weight = detail::he_normal({cout, per, k, k}, per * k * k, rng);
  l.bias = Tensor({cout});
  return l;
}

inline Layer simple_layer(LayerKind kind, std::string name, std::vector<std::size_t> inputs)
{
  Layer l;
  l.kind = kind;
  l.name = std::move(name);
  l.inputs = std::move(inputs);
  return l;
}

/// Linear/ReLU stack; `act` is ReLU or ReLU6.
inline Graph mlp(std::size_t in, const std::vector<std::size_t> &hidden, std::size_t out, std::uint64_t seed,
                 LayerKind act = LayerKind::ReLU)
{
  std::mt19937_64 rng(seed);
  Graph g;
  g.input_shape = {in};
  std::size_t v = 0, width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i)
  {
    v = detail::add_layer(g, linear_layer("fc" + std::to_string(i + 1), v, width, hidden[i], rng));
    v = detail::add_layer(g, simple_layer(act, "act" + std::to_string(i + 1), {v}));
    width = hidden[i];
  }
  detail::add_layer(g, linear_layer("head", v, width, out, rng));
  return g;
}

/// Small separable CNN for [1,8,8] images: conv, pool, depthwise, pointwise, pool, linear.
inline Graph digits_cnn(std::uint64_t seed, std::size_t width = 8)
{
  std::mt19937_64 rng(seed);
  Graph g;
  g.input_shape = {1, 8, 8};
  std::size_t v = detail::add_layer(g, conv_layer("conv1", 0, 1, width, 3, 1, false, rng));
  v = detail::add_layer(g, simple_layer(LayerKind::ReLU, "relu1", {v}));
  Layer pool = simple_layer(LayerKind::MaxPool, "pool1", {v});
  v = detail::add_layer(g, pool);
  v = detail::add_layer(g, conv_layer("dw2", v, width, width, 3, 1, true, rng));
  v = detail::add_layer(g, simple_layer(LayerKind::ReLU, "relu2", {v}));
  v = detail::add_layer(g, conv_layer("pw3", v, width, 2 * width, 1, 0, false, rng));
  v = detail::add_layer(g, simple_layer(LayerKind::ReLU, "relu3", {v}));
  v = detail::add_layer(g, simple_layer(LayerKind::AvgPool, "pool3", {v}));
  v = detail::add_layer(g, simple_layer(LayerKind::Flatten, "flat", {v}));
  detail::add_layer(g, linear_layer("head", v, 2 * width * 4, 10, rng));
  return g;
}

struct FpTrainConfig
{
  int epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Float training with Adam and cross-entropy (classifier) or MSE (regression).
inline Graph train_fp(const Graph &input, const Dataset &d, const FpTrainConfig &cfg)
{
  Graph g = input;
  ParamBinding bind;
  std::vector<ag::Var> params;
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    auto add = [&](std::map<std::size_t, ag::Var> &m, const Tensor &t) {
      auto v = ag::Var::parameter(t);
      m.emplace(k, v);
      params.push_back(v);
    };
    if (is_mac(l.kind))
    {
      add(bind.weight, l.weight);
      add(bind.bias, l.bias);
    }
    else if (l.kind == LayerKind::BatchNorm)
    {
      add(bind.gamma, l.gamma);
      add(bind.beta, l.beta);
    }
  }
  std::vector<Tensor *> ptrs;
  for (auto &p : params)
    ptrs.push_back(&p.mutable_value());
  const bool classify = g.task == "classifier";
  std::vector<int> labels;
  if (classify)
    labels = d.class_labels();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  ag::AdamState adam;
  for (int e = 0; e < cfg.epochs; ++e)
  {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size)
    {
      const auto span = std::span(idx).subspan(b, std::min(cfg.batch_size, idx.size() - b));
      const Dataset batch = d.subset(span);
      for (auto &p : params)
        p.zero_grad();
      const auto out = run_graph(g, ag::Var(batch.inputs), ExecMode::FP, &bind).output();
      ag::Var loss;
      if (classify)
      {
        std::vector<int> bl;
        for (auto i : span)
          bl.push_back(labels[i]);
        loss = ag::softmax_cross_entropy(out, bl);
      }
      else
        loss = ag::mse_loss(out, ag::Var(*batch.labels));
      if (!std::isfinite(loss.value()[0]))
        throw NumericalError("non-finite loss while training the float model");
      ag::backward(loss);
      std::vector<Tensor> grads;
      for (auto &p : params)
        grads.push_back(p.grad());
      ag::adam_step(ptrs, grads, adam, cfg.lr);
    }
  }
  for (const auto &[k, v] : bind.weight)
    g.layers[k].weight = v.value();
  for (const auto &[k, v] : bind.bias)
    g.layers[k].bias = v.value();
  for (const auto &[k, v] : bind.gamma)
    g.layers[k].gamma = v.value();
  for (const auto &[k, v] : bind.beta)
    g.layers[k].beta = v.value();
  return g;
}

/// Per-channel input mean and std of a dataset (axis 1), stored on the graph.
inline void set_input_stats(Graph &g, const Tensor &x)
{
  const std::size_t c = x.dim(1), inner = inner_size(x), n = x.dim(0);
  g.input_mean.assign(c, 0.0);
  g.input_std.assign(c, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i)
        g.input_mean[ch] += x[(b * c + ch) * inner + i];
  const double cnt = static_cast<double>(n * inner);
  for (auto &m : g.input_mean)
    m /= cnt;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i)
      {
        const double dlt = x[(b * c + ch) * inner + i] - g.input_mean[ch];
        g.input_std[ch] += dlt * dlt;
      }
  for (auto &s : g.input_std)
    s = std::sqrt(s / cnt);
}

/**
 * Insert a BatchNorm after every Linear/Conv that feeds an activation, preserving the
 * function: BN shift and scale are the pre-activation channel statistics on `x`,
 * running statistics are random, and the layer is rescaled to compensate.
 */
inline Graph insert_batchnorm(const Graph &g, const Tensor &x, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mean_d(-0.5, 0.5), var_d(0.5, 2.0);
  const auto trace = run_graph(g, ag::Var(x), ExecMode::FP);
  const auto cons = consumers(g);
  Graph out = g;
  out.layers.clear();
  std::vector<std::size_t> new_id(g.num_values());
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    Layer l = g.layers[k];
    for (auto &v : l.inputs)
      v = new_id[v];
    const bool feeds_act =
        is_mac(l.kind) && cons[k + 1].size() == 1 && is_activation(g.layers[cons[k + 1][0]].kind);
    if (!feeds_act)
    {
      out.layers.push_back(std::move(l));
      new_id[k + 1] = out.layers.size();
      continue;
    }
    const Tensor &pre = trace.raw[k + 1].value();
    const std::size_t c = pre.dim(1), inner = inner_size(pre), n = pre.dim(0);
    std::vector<double> mu(c, 0.0), sd(c, 0.0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i)
          mu[ch] += pre[(b * c + ch) * inner + i];
    for (auto &m : mu)
      m /= static_cast<double>(n * inner);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i)
          sd[ch] += std::pow(pre[(b * c + ch) * inner + i] - mu[ch], 2);
    Layer bn = simple_layer(LayerKind::BatchNorm, l.name + "_bn", {});
    bn.gamma = Tensor({c});
    bn.beta = Tensor({c});
    bn.mean = Tensor({c});
    bn.var = Tensor({c});
    std::vector<double> f(c);
    for (std::size_t ch = 0; ch < c; ++ch)
    {
      bn.gamma[ch] = std::max(std::sqrt(sd[ch] / static_cast<double>(n * inner)), 1e-3);
      bn.beta[ch] = mu[ch];
      bn.mean[ch] = mean_d(rng);
      bn.var[ch] = var_d(rng);
      f[ch] = bn.gamma[ch] / std::sqrt(bn.var[ch] + bn.eps);
    }
    // BN(W'x + b') = f (W'x + b' - mean) + beta equals Wx + b.
    std::vector<double> inv(c);
    for (std::size_t ch = 0; ch < c; ++ch)
      inv[ch] = 1.0 / f[ch];
    scale_output_channels(l, inv);
    for (std::size_t ch = 0; ch < c; ++ch)
      l.bias[ch] = (l.bias[ch] - bn.beta[ch]) / f[ch] + bn.mean[ch];
    out.layers.push_back(std::move(l));
    bn.inputs = {out.layers.size()};
    out.layers.push_back(std::move(bn));
    new_id[k + 1] = out.layers.size();
  }
  validate(out);
  return out;
}

/// A trained float model with its data splits.
struct Task
{
  std::string name;
  Graph model;
  Dataset train, calib, test;
};

/**
 * Train a toy model for a named dataset. The float model carries BatchNorm (inserted
 * function-preservingly after training) and input statistics.
 */
inline Task make_task(std::string_view name, std::uint64_t seed)
{
  Task t;
  t.name = std::string(name);
  Graph g;
  std::size_t n_train = 800, n_test = 400;
  FpTrainConfig fc;
  fc.seed = seed;
  if (name == "two_moons")
    g = mlp(2, {16, 16}, 2, seed);
  else if (name == "gaussians")
    g = mlp(8, {32, 32}, 4, seed);
  else if (name == "digits")
  {
    g = digits_cnn(seed);
    n_train = 600;
    n_test = 300;
    fc.epochs = 25;
  }
  else
    throw ConfigError("unknown task '" + std::string(name) + "' (two_moons, gaussians, digits)");
  t.train = data::by_name(name, n_train, seed * 3 + 1, seed);
  t.test = data::by_name(name, n_test, seed * 3 + 2, seed);
  const std::size_t n_calib = std::min<std::size_t>(256, n_train);
  t.calib = t.train.rows(0, n_calib);
  g = train_fp(g, t.train, fc);
  set_input_stats(g, t.train.inputs);
  t.model = insert_batchnorm(g, t.train.inputs, seed + 7);
  return t;
}

} // namespace quantkit::models

#endif // QUANTKIT_MODELS_HPP
