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

#ifndef QUANTKIT_ADAROUND_HPP
#define QUANTKIT_ADAROUND_HPP

#include "quantkit/autograd.hpp"
#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/ptq_transforms.hpp"
#include "quantkit/serialization.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace quantkit
{

/// Stretch of the rectified sigmoid so that h reaches 0 and 1 at finite V.
inline constexpr double kZeta = 1.1;
inline constexpr double kGammaStretch = -0.1;

inline double rectified_sigmoid(double v)
{
  const double s = 1.0 / (1.0 + std::exp(-v));
  return std::clamp(s * (kZeta - kGammaStretch) + kGammaStretch, 0.0, 1.0);
}

inline Tensor h_rectified_sigmoid(const Tensor &v) { return ops::map(v, rectified_sigmoid); }

/// f_reg = sum(1 - |2h - 1|^beta).
inline double f_reg(const Tensor &h, double beta)
{
  if (!(beta > 0.0))
    throw ContractError("f_reg: beta must be positive");
  double r = 0.0;
  for (double v : h.vec())
    r += 1.0 - std::pow(std::abs(2.0 * v - 1.0), beta);
  return r;
}

struct AdaRoundConfig
{
  int iterations = 2000;
  double lambda = 1.0;
  double beta_start = 20.0;
  double beta_end = 2.0;
  double warmup = 0.2;
  double lr = 1e-2;
  std::size_t batch_size = 32; // rows sampled per iteration; 0: full calibration batch
  std::uint64_t seed = 0;
  int trace_every = 100;
};

/// Regularizer exponent at iteration t; nullopt during warmup.
inline std::optional<double> anneal_beta(const AdaRoundConfig &c, int t)
{
  const int warm = static_cast<int>(c.warmup * c.iterations);
  if (t < warm)
    return std::nullopt;
  const double span = std::max(1, c.iterations - warm);
  const double progress = std::min(1.0, static_cast<double>(t - warm) / span);
  return c.beta_start + (c.beta_end - c.beta_start) * progress;
}

/// Continuous rounding variables plus the frozen floor(W/s) grid.
struct SoftQuantState
{
  Tensor v;
  Tensor floor;
  QuantizerSpec spec;
};

/// V such that the initial soft weights reproduce W: h(V) = W/s - floor(W/s).
inline SoftQuantState init_soft_quant(const Tensor &w, const QuantizerSpec &spec)
{
  spec.validate();
  spec.check_tensor(w);
  SoftQuantState st{Tensor(w.shape()), Tensor(w.shape()), spec};
  for (std::size_t i = 0; i < w.numel(); ++i)
  {
    const double s = spec.scale[spec.group_of(w.shape(), i)];
    const double u = w[i] / s;
    st.floor[i] = std::floor(u);
    const double frac = u - st.floor[i];
    const double t = std::clamp((frac - kGammaStretch) / (kZeta - kGammaStretch), 1e-4, 1.0 - 1e-4);
    st.v[i] = std::log(t / (1.0 - t));
  }
  return st;
}

namespace detail
{

inline Tensor soft_weights_from_h(const SoftQuantState &st, const Tensor &h, Tensor *inside = nullptr)
{
  Tensor out(st.floor.shape());
  if (inside)
    *inside = Tensor(st.floor.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
  {
    const auto g = st.spec.group_of(out.shape(), i);
    const auto lim = st.spec.int_limits(g);
    const double u = st.floor[i] + h[i];
    const double c = std::clamp(u, static_cast<double>(lim.n), static_cast<double>(lim.p));
    out[i] = st.spec.scale[g] * c;
    if (inside)
      (*inside)[i] = (u >= static_cast<double>(lim.n) && u <= static_cast<double>(lim.p)) ? st.spec.scale[g] : 0.0;
  }
  return out;
}

} // namespace detail

/// W_soft = s clamp(floor(W/s) + h(V); n, p).
inline Tensor soft_quant_weights(const SoftQuantState &st) { return detail::soft_weights_from_h(st, h_rectified_sigmoid(st.v)); }

/// Weights on the hard grid chosen by mask: s clamp(floor(W/s) + mask; n, p).
inline Tensor hard_quant_weights(const SoftQuantState &st, const Tensor &mask) { return detail::soft_weights_from_h(st, mask); }

inline Tensor hard_mask(const Tensor &v)
{
  return ops::map(v, [](double x) { return rectified_sigmoid(x) >= 0.5 ? 1.0 : 0.0; });
}

/// Up/down mask equal to round-to-nearest (the floor grid plus 1 where frac(W/s) >= 0.5, half-even at ties).
inline Tensor nearest_mask(const Tensor &w, const SoftQuantState &st)
{
  Tensor m(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i)
  {
    const double s = st.spec.scale[st.spec.group_of(w.shape(), i)];
    m[i] = round_half_even(w[i] / s) - st.floor[i];
  }
  return m;
}

namespace ag
{

inline Var rectified_sigmoid(const Var &v)
{
  auto pv = v.node();
  Tensor out = h_rectified_sigmoid(v.value());
  return make_op(out, {v}, "rectified_sigmoid", [pv](Node &self) {
    Tensor d(pv->value.shape());
    for (std::size_t i = 0; i < d.numel(); ++i)
    {
      const double s = 1.0 / (1.0 + std::exp(-pv->value[i]));
      const double pre = s * (kZeta - kGammaStretch) + kGammaStretch;
      d[i] = (pre > 0.0 && pre < 1.0) ? self.grad[i] * s * (1.0 - s) * (kZeta - kGammaStretch) : 0.0;
    }
    pv->accumulate(d);
  });
}

inline Var soft_quant(const SoftQuantState &st, const Var &h)
{
  Tensor inside;
  Tensor out = detail::soft_weights_from_h(st, h.value(), &inside);
  auto ph = h.node();
  return make_op(out, {h}, "soft_quant", [ph, inside](Node &self) { ph->accumulate(ops::mul(self.grad, inside)); });
}

inline Var f_reg(const Var &h, double beta)
{
  auto ph = h.node();
  return make_op(Tensor::scalar(quantkit::f_reg(h.value(), beta)), {h}, "f_reg", [ph, beta](Node &self) {
    Tensor d(ph->value.shape());
    for (std::size_t i = 0; i < d.numel(); ++i)
    {
      const double u = 2.0 * ph->value[i] - 1.0;
      const double a = std::abs(u);
      const double sign = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
      d[i] = a > 0.0 ? -self.grad[0] * beta * std::pow(a, beta - 1.0) * sign * 2.0 : 0.0;
    }
    ph->accumulate(d);
  });
}

/// Sum of squares over axis 1, averaged over every other axis.
inline Var reconstruction_loss(const Var &a, const Var &b)
{
  const auto &t = a.value();
  const double rows = static_cast<double>(t.numel()) / static_cast<double>(t.rank() >= 2 ? t.dim(1) : 1);
  return scale(sum(square(sub(a, b))), 1.0 / rows);
}

} // namespace ag

/// Layer activation f_a applied after the MAC, or none.
struct LayerActivation
{
  std::optional<LayerKind> kind;
  std::vector<double> clip;
};

inline ag::Var apply_activation(const LayerActivation &act, const ag::Var &y)
{
  if (!act.kind)
    return y;
  return *act.kind == LayerKind::ReLU ? ag::relu(y) : ag::relu6(y, act.clip);
}

inline ag::Var layer_mac(const Layer &l, const ag::Var &x, const ag::Var &w)
{
  const ag::Var b(l.bias);
  if (l.kind == LayerKind::Linear)
    return ag::linear(x, w, b);
  return ag::conv2d(x, w, b, l.stride, l.padding, l.kind == LayerKind::DepthwiseConv2d);
}

/// Local objective ||f_a(W x) - f_a(W_q x_hat)||^2 of a candidate weight tensor.
inline double layer_reconstruction(const Layer &l, const LayerActivation &act, const Tensor &x_fp, const Tensor &x_hat,
                                   const Tensor &wq)
{
  const auto target = apply_activation(act, layer_mac(l, ag::Var(x_fp), ag::Var(l.weight)));
  const auto pred = apply_activation(act, layer_mac(l, ag::Var(x_hat), ag::Var(wq)));
  return ag::reconstruction_loss(pred, target).value()[0];
}

/// Mean over samples of ||dW x||^2 (the output-MSE proxy of the rounding QUBO).
inline double qubo_objective(const Tensor &dw, const Tensor &x)
{
  if (dw.rank() != 2 || x.rank() != 2 || dw.dim(1) != x.dim(1))
    throw DimensionError("qubo_objective expects dW [out,in] and x [N,in]");
  const Tensor y = ops::linear(x, dw, Tensor());
  double s = 0.0;
  for (double v : y.vec())
    s += v * v;
  return s / static_cast<double>(x.dim(0));
}

struct AdaRoundLayerResult
{
  Tensor mask;
  Tensor weight; // hard-quantized weights on the grid
  double loss_adaround = 0.0;
  double loss_nearest = 0.0;
  double binary_fraction = 0.0;
  bool fallback_to_nearest = false;
  json trace;
};

inline double binary_fraction(const Tensor &h, double tol = 1e-2)
{
  std::size_t n = 0;
  for (double v : h.vec())
    if (v <= tol || v >= 1.0 - tol)
      ++n;
  return static_cast<double>(n) / static_cast<double>(h.numel());
}

/**
 * Learn the up/down rounding of one layer's weights against its calibration inputs.
 * x_hat carries the inputs produced by the already-quantized preceding layers.
 */
inline AdaRoundLayerResult adaround_layer(const Layer &l, const QuantizerSpec &spec, const LayerActivation &act,
                                          const Tensor &x_fp, const Tensor &x_hat, const AdaRoundConfig &cfg)
{
  if (!is_mac(l.kind))
    throw ContractError("adaround_layer on non-MAC layer '" + l.name + "'");
  require_same_shape(x_fp, x_hat, "adaround_layer inputs");
  SoftQuantState st = init_soft_quant(l.weight, spec);
  const std::size_t n = x_fp.dim(0);
  const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  std::mt19937_64 rng(cfg.seed);
  const Tensor full_target = apply_activation(act, layer_mac(l, ag::Var(x_fp), ag::Var(l.weight))).value();

  ag::Var v = ag::Var::parameter(st.v);
  ag::AdamState adam;
  json trace = json::array();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int t = 0; t < cfg.iterations; ++t)
  {
    Tensor xb = x_hat, tb = full_target;
    if (batch < n)
    {
      std::vector<std::size_t> pick(batch);
      for (auto &p : pick)
        p = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      xb = ops::gather_rows(x_hat, pick);
      tb = ops::gather_rows(full_target, pick);
    }
    v.zero_grad();
    const auto h = ag::rectified_sigmoid(v);
    const auto wsoft = ag::soft_quant(st, h);
    const auto pred = apply_activation(act, layer_mac(l, ag::Var(xb), wsoft));
    const auto rec = ag::reconstruction_loss(pred, ag::Var(tb));
    const auto beta = anneal_beta(cfg, t);
    ag::Var loss = rec;
    double reg = 0.0;
    if (beta)
    {
      const auto r = ag::f_reg(h, *beta);
      reg = r.value()[0];
      loss = ag::add(rec, ag::scale(r, cfg.lambda));
    }
    const double lv = loss.value()[0];
    if (!std::isfinite(lv))
      throw NumericalError("adaround diverged on layer '" + l.name + "' at iteration " + std::to_string(t) +
                           "; trace: " + trace.dump());
    ag::backward(loss);
    Tensor *params[] = {&v.mutable_value()};
    const Tensor grads[] = {v.grad()};
    ag::adam_step(params, grads, adam, cfg.lr);
    if (cfg.trace_every > 0 && (t % cfg.trace_every == 0 || t + 1 == cfg.iterations))
      trace.push_back({{"iter", t},
                       {"loss", lv},
                       {"reconstruction", rec.value()[0]},
                       {"f_reg", reg},
                       {"beta", beta ? *beta : 0.0},
                       {"binary_fraction", binary_fraction(h.value())}});
  }
  st.v = v.value();
  AdaRoundLayerResult res;
  res.binary_fraction = binary_fraction(h_rectified_sigmoid(st.v));
  res.mask = hard_mask(st.v);
  res.weight = hard_quant_weights(st, res.mask);
  const Tensor near = hard_quant_weights(st, nearest_mask(l.weight, st));
  res.loss_adaround = layer_reconstruction(l, act, x_fp, x_hat, res.weight);
  res.loss_nearest = layer_reconstruction(l, act, x_fp, x_hat, near);
  if (res.loss_adaround > res.loss_nearest)
  {
    // Keep whichever hard rounding reconstructs the calibration outputs better.
    res.fallback_to_nearest = true;
    res.mask = nearest_mask(l.weight, st);
    res.weight = near;
  }
  res.trace = std::move(trace);
  return res;
}

/// Activation fused after layer k (sole consumer ReLU/ReLU6), if any.
inline LayerActivation fused_activation(const Graph &g, std::size_t k)
{
  const auto cons = consumers(g);
  if (k + 1 == g.output_value() || cons[k + 1].size() != 1)
    return {};
  const Layer &next = g.layers[cons[k + 1][0]];
  if (!is_activation(next.kind))
    return {};
  return {next.kind, next.clip};
}

struct AdaRoundGraphResult
{
  Graph graph;
  json record;
};

/// Sequential AdaRound over all MAC layers with fitted weight quantizers.
inline AdaRoundGraphResult apply_adaround(const Graph &input, const Tensor &calib, const AdaRoundConfig &cfg)
{
  AdaRoundGraphResult res{input, json::object()};
  Graph &g = res.graph;
  const Placement p = placement(g);
  const auto fp = run_graph(input, ag::Var(calib), ExecMode::FP);
  json layers = json::array();
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const int ws = p.weight_slot[k];
    if (ws < 0)
      continue;
    const auto &slot = g.slots[static_cast<std::size_t>(ws)];
    if (!slot.spec)
      throw ConfigError("adaround: weight quantizer '" + slot.id + "' has no fitted spec");
    if (!slot.enabled)
      continue;
    const auto q = run_graph(weights_only(g), ag::Var(calib), ExecMode::Sim);
    const Tensor &x_hat = q.values[g.layers[k].inputs[0]].value();
    const Tensor &x_fp = fp.values[input.layers[k].inputs[0]].value();
    AdaRoundConfig lc = cfg;
    lc.seed = cfg.seed + k;
    auto r = adaround_layer(input.layers[k], *slot.spec, fused_activation(g, k), x_fp, x_hat, lc);
    g.layers[k].weight = r.weight;
    layers.push_back({{"layer", g.layers[k].name},
                      {"loss_adaround", r.loss_adaround},
                      {"loss_nearest", r.loss_nearest},
                      {"binary_fraction", r.binary_fraction},
                      {"fallback_to_nearest", r.fallback_to_nearest},
                      {"trace", r.trace}});
  }
  res.record = json{{"config",
                     {{"iterations", cfg.iterations},
                      {"lambda", cfg.lambda},
                      {"beta_start", cfg.beta_start},
                      {"beta_end", cfg.beta_end},
                      {"warmup", cfg.warmup},
                      {"lr", cfg.lr},
                      {"batch_size", cfg.batch_size}}},
                    {"layers", layers}};
  return res;
}

} // namespace quantkit

#endif // QUANTKIT_ADAROUND_HPP
