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

#ifndef QUANTKIT_CALIBRATION_HPP
#define QUANTKIT_CALIBRATION_HPP

#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/ptq_transforms.hpp"
#include "quantkit/range_setting.hpp"
#include "quantkit/serialization.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace quantkit
{

enum class ActRangeMethod
{
  MinMax,
  MSE,
  XentLast, // MSE everywhere, cross-entropy on the quantizer of the final output
  BN,       // data-free
};

inline std::string_view to_string(ActRangeMethod m)
{
  switch (m)
  {
    case ActRangeMethod::MinMax:
      return "minmax";
    case ActRangeMethod::MSE:
      return "mse";
    case ActRangeMethod::XentLast:
      return "xent-last";
    case ActRangeMethod::BN:
      return "bn";
  }
  return "?";
}

inline ActRangeMethod act_range_from_string(std::string_view s)
{
  if (s == "minmax")
    return ActRangeMethod::MinMax;
  if (s == "mse")
    return ActRangeMethod::MSE;
  if (s == "xent-last")
    return ActRangeMethod::XentLast;
  if (s == "bn")
    return ActRangeMethod::BN;
  throw ConfigError("unknown activation range method '" + std::string(s) + "'");
}

inline RangeMethod weight_range_from_string(std::string_view s)
{
  if (s == "minmax")
    return RangeMethod::MinMax;
  if (s == "mse")
    return RangeMethod::MSE;
  throw ConfigError("unknown weight range method '" + std::string(s) + "'");
}

/// Fit every weight quantizer from its tensor.
inline json fit_weight_quantizers(Graph &g, RangeMethod method)
{
  const Placement p = placement(g);
  json rec = json::array();
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const int ws = p.weight_slot[k];
    if (ws < 0)
      continue;
    auto &slot = g.slots[static_cast<std::size_t>(ws)];
    slot.spec = fit_spec(g.layers[k].weight, slot.scheme, slot.bitwidth, slot.granularity, method);
    rec.push_back({{"quantizer", slot.id}, {"method", to_string(method)}});
  }
  return rec;
}

/// Pre-quantizer values seen by each activation slot, from one pass with weights quantized.
struct Observations
{
  std::vector<std::vector<double>> values; // per slot (empty for weight slots)
  std::vector<std::vector<Tensor>> tensors;
};

inline Observations observe_activations(const Graph &g, const Tensor &calib)
{
  if (calib.empty())
    throw ContractError("activation calibration needs a non-empty calibration set");
  const Placement p = placement(g);
  const Graph wq = with_enabled_slots(g, [](const QuantSlot &s) { return s.kind == SlotKind::Weight && s.enabled; });
  const bool weights_fitted = std::all_of(g.slots.begin(), g.slots.end(), [](const QuantSlot &s) {
    return s.kind != SlotKind::Weight || !s.enabled || s.spec.has_value();
  });
  const auto t = run_graph(weights_fitted ? wq : g, ag::Var(calib), weights_fitted ? ExecMode::Sim : ExecMode::FP);
  Observations o;
  o.values.resize(g.slots.size());
  o.tensors.resize(g.slots.size());
  for (std::size_t s = 0; s < g.slots.size(); ++s)
    for (auto v : p.sites[s])
    {
      const Tensor &x = t.raw[v].value();
      o.values[s].insert(o.values[s].end(), x.vec().begin(), x.vec().end());
      o.tensors[s].push_back(x);
    }
  return o;
}

/// Fit all activation quantizers from calibration data.
inline json fit_activation_quantizers(Graph &g, const Tensor &calib, ActRangeMethod method)
{
  if (method == ActRangeMethod::BN)
    throw ContractError("BN-based activation ranges are fitted by fit_activation_quantizers_data_free");
  const Placement p = placement(g);
  const auto obs = observe_activations(g, calib);
  const int final_slot = p.act_slot[g.output_value()];
  json rec = json::array();
  for (std::size_t s = 0; s < g.slots.size(); ++s)
  {
    auto &slot = g.slots[s];
    if (slot.kind != SlotKind::Activation)
      continue;
    const auto &v = obs.values[s];
    Range r;
    std::string used;
    if (method == ActRangeMethod::MinMax)
    {
      r = range_minmax(v);
      used = "minmax";
    }
    else if (method == ActRangeMethod::XentLast && static_cast<int>(s) == final_slot && g.task == "classifier")
    {
      r = range_cross_entropy(obs.tensors[s], slot.scheme, slot.bitwidth);
      used = "xent";
    }
    else
    {
      r = range_mse(v, slot.scheme, slot.bitwidth);
      used = "mse";
    }
    slot.spec = spec_from_range(r, slot.scheme, slot.bitwidth);
    rec.push_back({{"quantizer", slot.id}, {"method", used}, {"qmin", r.qmin}, {"qmax", r.qmax}});
  }
  return rec;
}

// ---- data-free activation statistics --------------------------------------------

/// Per-channel mean and variance of one value under the independent-Gaussian model.
struct Moments
{
  std::vector<double> mean;
  std::vector<double> var;
};

/// Mean and variance of clip(X, 0, hi) for X ~ N(mu, var).
inline Moments clipped_gaussian_moments(double mu, double var, double hi)
{
  const double sigma = std::sqrt(std::max(var, 0.0));
  if (sigma == 0.0)
  {
    const double c = std::clamp(mu, 0.0, hi);
    return {{c}, {0.0}};
  }
  const double a = -mu / sigma;
  const double pa = normal_cdf(a), fa = normal_pdf(a);
  double pb = 1.0, fb = 0.0, bterm = 0.0;
  if (std::isfinite(hi))
  {
    const double b = (hi - mu) / sigma;
    pb = normal_cdf(b);
    fb = normal_pdf(b);
    bterm = b * fb;
  }
  const double mass = pb - pa;
  double m1 = mu * mass + sigma * (fa - fb);
  double m2 = (mu * mu + var) * mass + 2.0 * mu * sigma * (fa - fb) + var * (a * fa - bterm);
  if (std::isfinite(hi))
  {
    m1 += hi * (1.0 - pb);
    m2 += hi * hi * (1.0 - pb);
  }
  return {{m1}, {std::max(0.0, m2 - m1 * m1)}};
}

/// Propagate input_stats through the graph; BN metadata overrides a layer's output moments.
inline std::vector<Moments> propagate_moments(const Graph &g)
{
  const auto shapes = infer_shapes(g, 1);
  const std::size_t cin = shapes[0].size() >= 2 ? shapes[0][1] : 1;
  if (g.input_mean.empty())
    throw ConfigError("data-free activation ranges need input_stats (mean/std) in the model manifest");
  if (g.input_mean.size() != cin)
    throw ConfigError("input_stats has " + std::to_string(g.input_mean.size()) + " channels, input has " +
                      std::to_string(cin));
  std::vector<Moments> m(g.num_values());
  m[0].mean = g.input_mean;
  for (double s : g.input_std)
    m[0].var.push_back(s * s);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    const Moments &in = m[l.inputs[0]];
    Moments out;
    switch (l.kind)
    {
      case LayerKind::Linear:
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
      {
        const std::size_t oc = l.weight.dim(0);
        out.mean.assign(oc, 0.0);
        out.var.assign(oc, 0.0);
        const bool dw = l.kind == LayerKind::DepthwiseConv2d;
        const std::size_t ic = dw ? 1 : l.weight.dim(1);
        const std::size_t spatial = l.weight.numel() / (oc * ic);
        for (std::size_t o = 0; o < oc; ++o)
        {
          for (std::size_t i = 0; i < ic; ++i)
          {
            const std::size_t c = dw ? o : i;
            for (std::size_t s = 0; s < spatial; ++s)
            {
              const double w = l.weight[(o * ic + i) * spatial + s];
              out.mean[o] += w * in.mean.at(c);
              out.var[o] += w * w * in.var.at(c);
            }
          }
          out.mean[o] += l.bias[o];
        }
        if (l.bn_meta)
          for (std::size_t o = 0; o < oc; ++o)
          {
            out.mean[o] = l.bn_meta->beta[o];
            out.var[o] = l.bn_meta->gamma[o] * l.bn_meta->gamma[o];
          }
        break;
      }
      case LayerKind::BatchNorm:
      {
        const auto f = bn_scale(l);
        for (std::size_t c = 0; c < f.size(); ++c)
        {
          out.mean.push_back(f[c] * (in.mean[c] - l.mean[c]) + l.beta[c]);
          out.var.push_back(f[c] * f[c] * in.var[c]);
        }
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::ReLU6:
        for (std::size_t c = 0; c < in.mean.size(); ++c)
        {
          double hi = std::numeric_limits<double>::infinity();
          if (l.kind == LayerKind::ReLU6)
            hi = l.clip.empty() ? 6.0 : l.clip[c];
          const auto r = clipped_gaussian_moments(in.mean[c], in.var[c], hi);
          out.mean.push_back(r.mean[0]);
          out.var.push_back(r.var[0]);
        }
        break;
      case LayerKind::Add:
        out = in;
        for (std::size_t i = 1; i < l.inputs.size(); ++i)
          for (std::size_t c = 0; c < out.mean.size(); ++c)
          {
            out.mean[c] += m[l.inputs[i]].mean[c];
            out.var[c] += m[l.inputs[i]].var[c];
          }
        break;
      case LayerKind::Concat:
        for (auto v : l.inputs)
        {
          out.mean.insert(out.mean.end(), m[v].mean.begin(), m[v].mean.end());
          out.var.insert(out.var.end(), m[v].var.begin(), m[v].var.end());
        }
        break;
      case LayerKind::AvgPool:
      case LayerKind::MaxPool:
        out = in;
        break;
      case LayerKind::Flatten:
      {
        const Shape &s = shapes[l.inputs[0]];
        const std::size_t per = shape_numel(s) / (s[0] * s[1]);
        for (std::size_t c = 0; c < in.mean.size(); ++c)
          for (std::size_t i = 0; i < per; ++i)
          {
            out.mean.push_back(in.mean[c]);
            out.var.push_back(in.var[c]);
          }
        break;
      }
    }
    m[k + 1] = std::move(out);
  }
  return m;
}

inline constexpr double kDataFreeAlpha = 6.0;

/// Data-free activation ranges: BN metadata where available, Gaussian moments elsewhere.
inline json fit_activation_quantizers_data_free(Graph &g, double alpha = kDataFreeAlpha)
{
  const Placement p = placement(g);
  std::optional<std::vector<Moments>> moments;
  json rec = json::array();
  for (std::size_t s = 0; s < g.slots.size(); ++s)
  {
    auto &slot = g.slots[s];
    if (slot.kind != SlotKind::Activation)
      continue;
    Range total{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    std::string used = "bn";
    for (auto v : p.sites[s])
    {
      Range r;
      // Walk back to the pre-activation of a fused activation.
      const Layer *act = (v > 0 && is_activation(g.layers[v - 1].kind)) ? &g.layers[v - 1] : nullptr;
      const std::size_t pre = act ? act->inputs[0] : v;
      const Layer *mac = pre > 0 ? &g.layers[pre - 1] : nullptr;
      if (mac && is_mac(mac->kind) && mac->bn_meta)
        r = range_bn(mac->bn_meta->beta, mac->bn_meta->gamma, alpha);
      else
      {
        if (!moments)
          moments = propagate_moments(g);
        const Moments &mm = (*moments)[pre];
        r = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
        for (std::size_t c = 0; c < mm.mean.size(); ++c)
        {
          const double sd = std::sqrt(mm.var[c]);
          r.qmin = std::min(r.qmin, mm.mean[c] - alpha * sd);
          r.qmax = std::max(r.qmax, mm.mean[c] + alpha * sd);
        }
        used = "moments";
      }
      if (act)
      {
        double hi = std::numeric_limits<double>::infinity();
        if (act->kind == LayerKind::ReLU6)
          hi = act->clip.empty() ? 6.0 : *std::max_element(act->clip.begin(), act->clip.end());
        r.qmin = std::clamp(r.qmin, 0.0, hi);
        r.qmax = std::clamp(r.qmax, 0.0, hi);
      }
      total.qmin = std::min(total.qmin, r.qmin);
      total.qmax = std::max(total.qmax, r.qmax);
    }
    slot.spec = spec_from_range(total, slot.scheme, slot.bitwidth);
    rec.push_back({{"quantizer", slot.id}, {"method", used}, {"qmin", total.qmin}, {"qmax", total.qmax}});
  }
  return rec;
}

} // namespace quantkit

#endif // QUANTKIT_CALIBRATION_HPP
