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

#ifndef QUANTKIT_PTQ_TRANSFORMS_HPP
#define QUANTKIT_PTQ_TRANSFORMS_HPP

#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/serialization.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace quantkit
{

// ---- channel ranges -------------------------------------------------------------

/// Max-abs of each output channel (axis 0) of a MAC layer's weight.
inline std::vector<double> output_channel_ranges(const Layer &l)
{
  const std::size_t n = l.weight.dim(0), per = l.weight.numel() / n;
  std::vector<double> r(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < per; ++i)
      r[k] = std::max(r[k], std::abs(l.weight[k * per + i]));
  return r;
}

/// Max-abs of the weights consuming each input channel.
inline std::vector<double> input_channel_ranges(const Layer &l)
{
  if (l.kind == LayerKind::DepthwiseConv2d)
    return output_channel_ranges(l);
  const std::size_t out = l.weight.dim(0), in = l.weight.dim(1);
  const std::size_t spatial = l.weight.numel() / (out * in);
  std::vector<double> r(in, 0.0);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t s = 0; s < spatial; ++s)
        r[i] = std::max(r[i], std::abs(l.weight[(o * in + i) * spatial + s]));
  return r;
}

/// Multiply every weight consuming input channel i by f[i].
inline void scale_input_channels(Layer &l, std::span<const double> f)
{
  if (l.kind == LayerKind::DepthwiseConv2d)
  {
    scale_output_channels(l, f);
    return;
  }
  const std::size_t out = l.weight.dim(0), in = l.weight.dim(1);
  const std::size_t spatial = l.weight.numel() / (out * in);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t s = 0; s < spatial; ++s)
        l.weight[(o * in + i) * spatial + s] *= f[i];
}

/// W c summed per output channel: the bias shift caused by a constant input c.
inline std::vector<double> weight_times_channel_constant(const Layer &l, std::span<const double> c)
{
  const std::size_t out = l.weight.dim(0);
  std::vector<double> shift(out, 0.0);
  if (l.kind == LayerKind::DepthwiseConv2d)
  {
    const std::size_t per = l.weight.numel() / out;
    for (std::size_t k = 0; k < out; ++k)
      for (std::size_t i = 0; i < per; ++i)
        shift[k] += l.weight[k * per + i] * c[k];
    return shift;
  }
  const std::size_t in = l.weight.dim(1), spatial = l.weight.numel() / (out * in);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t s = 0; s < spatial; ++s)
        shift[o] += l.weight[(o * in + i) * spatial + s] * c[i];
  return shift;
}

// ---- cross-layer equalization ---------------------------------------------------

/// s_i = sqrt(r1_i / r2_i); channels with a zero range keep s_i = 1.
inline std::vector<double> cle_scales(std::span<const double> r1, std::span<const double> r2)
{
  if (r1.size() != r2.size())
    throw ContractError("cle_scales: range lengths " + std::to_string(r1.size()) + " and " + std::to_string(r2.size()));
  std::vector<double> s(r1.size(), 1.0);
  for (std::size_t i = 0; i < r1.size(); ++i)
  {
    if (r1[i] < 0.0 || r2[i] < 0.0)
      throw ContractError("cle_scales: negative channel range");
    if (r1[i] > 0.0 && r2[i] > 0.0)
      s[i] = std::sqrt(r1[i] / r2[i]);
  }
  return s;
}

/// Two MAC layers joined by an optional ReLU/ReLU6 with no branch in between.
struct EqualizablePair
{
  std::size_t first;
  std::size_t second;
  std::optional<std::size_t> activation;
};

struct PairCandidate
{
  EqualizablePair pair;
  std::string skip_reason; // empty when eligible
};

inline std::vector<PairCandidate> find_pairs(const Graph &g)
{
  const auto cons = consumers(g);
  std::vector<PairCandidate> out;
  for (std::size_t a = 0; a < g.layers.size(); ++a)
  {
    if (!is_mac(g.layers[a].kind) || cons[a + 1].size() != 1)
      continue;
    std::size_t next = cons[a + 1][0];
    std::optional<std::size_t> act;
    if (is_activation(g.layers[next].kind))
    {
      act = next;
      if (cons[next + 1].size() != 1)
        continue;
      next = cons[next + 1][0];
    }
    if (!is_mac(g.layers[next].kind))
      continue;
    PairCandidate c{{a, next, act}, ""};
    const Layer &l1 = g.layers[a], &l2 = g.layers[next];
    const std::size_t coupled = l2.kind == LayerKind::DepthwiseConv2d ? l2.weight.dim(0) : l2.weight.dim(1);
    if (l1.weight.dim(0) != coupled)
      c.skip_reason = "channel count mismatch";
    out.push_back(c);
  }
  return out;
}

/// Rescale one pair in place with per-channel scales s; returns the scales used.
inline std::vector<double> equalize_pair(Graph &g, const EqualizablePair &p)
{
  Layer &l1 = g.layers[p.first];
  Layer &l2 = g.layers[p.second];
  const auto s = cle_scales(output_channel_ranges(l1), input_channel_ranges(l2));
  std::vector<double> inv(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    inv[i] = 1.0 / s[i];
  scale_output_channels(l1, inv);
  for (std::size_t i = 0; i < s.size(); ++i)
    l1.bias[i] *= inv[i];
  if (l1.bn_meta)
    for (std::size_t i = 0; i < s.size(); ++i)
    {
      l1.bn_meta->gamma[i] *= inv[i];
      l1.bn_meta->beta[i] *= inv[i];
    }
  scale_input_channels(l2, s);
  if (p.activation && g.layers[*p.activation].kind == LayerKind::ReLU6)
  {
    Layer &act = g.layers[*p.activation];
    if (act.clip.empty())
      act.clip.assign(s.size(), 6.0);
    for (std::size_t i = 0; i < s.size(); ++i)
      act.clip[i] *= inv[i];
  }
  return s;
}

struct CleOptions
{
  double tolerance = 1e-4;
  int max_sweeps = 20;
};

struct CleResult
{
  Graph graph;
  json record;
};

/// Equalize all eligible pairs, sweeping in topological order until the scales settle.
inline CleResult apply_cle(const Graph &input, const CleOptions &opt = {})
{
  if (input.quantized())
    throw ContractError("apply_cle expects a graph without quantizer slots");
  for (const auto &l : input.layers)
    if (l.kind == LayerKind::BatchNorm)
      throw ContractError("apply_cle expects a BN-folded graph (found '" + l.name + "')");
  CleResult res{input, json::object()};
  Graph &g = res.graph;
  const auto candidates = find_pairs(g);
  std::vector<std::vector<double>> total;
  json pairs = json::array(), skipped = json::array(), trace = json::array();
  for (const auto &c : candidates)
  {
    if (!c.skip_reason.empty())
      skipped.push_back({{"first", g.layers[c.pair.first].name},
                         {"second", g.layers[c.pair.second].name},
                         {"reason", c.skip_reason}});
    else
      total.emplace_back(g.layers[c.pair.first].weight.dim(0), 1.0);
  }
  int sweeps = 0;
  bool converged = total.empty();
  while (!converged && sweeps < opt.max_sweeps)
  {
    ++sweeps;
    double change = 0.0;
    std::size_t i = 0;
    for (const auto &c : candidates)
    {
      if (!c.skip_reason.empty())
        continue;
      const auto s = equalize_pair(g, c.pair);
      for (std::size_t ch = 0; ch < s.size(); ++ch)
      {
        change = std::max(change, std::abs(s[ch] - 1.0));
        total[i][ch] *= s[ch];
      }
      ++i;
    }
    trace.push_back(change);
    converged = change < opt.tolerance;
  }
  std::size_t i = 0;
  for (const auto &c : candidates)
    if (c.skip_reason.empty())
      pairs.push_back({{"first", g.layers[c.pair.first].name},
                       {"second", g.layers[c.pair.second].name},
                       {"scales", total[i++]}});
  res.record = json{{"pairs", pairs},     {"skipped", skipped},  {"sweeps", sweeps},
                    {"converged", converged}, {"max_scale_change", trace}};
  return res;
}

// ---- bias absorption --------------------------------------------------------------

struct AbsorbResult
{
  Graph graph;
  json record;
};

/// Pre-activation constant per channel that a ReLU passes unchanged.
inline std::vector<double> absorbable_constant_bn(const BnMeta &m)
{
  std::vector<double> c(m.beta.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = std::max(0.0, m.beta[i] - 3.0 * m.gamma[i]);
  return c;
}

/**
 * Move c = max(0, lower bound of the pre-activation) from layer 1's bias into layer 2's
 * bias through a ReLU. With calibration data the bound is the observed per-channel
 * minimum; otherwise beta - 3 gamma from the BN metadata. Layer 2 must be a Linear or an
 * unpadded convolution so that W2 c is a uniform bias shift.
 */
inline AbsorbResult absorb_bias(const Graph &input, const Tensor *calib = nullptr, bool strict = true)
{
  if (input.quantized())
    throw ContractError("absorb_bias expects a graph without quantizer slots");
  AbsorbResult res{input, json::object()};
  Graph &g = res.graph;
  json pairs = json::array(), skipped = json::array();
  for (const auto &cand : find_pairs(g))
  {
    const auto &p = cand.pair;
    const std::string n1 = g.layers[p.first].name, n2 = g.layers[p.second].name;
    auto skip = [&](const std::string &why) { skipped.push_back({{"first", n1}, {"second", n2}, {"reason", why}}); };
    if (!cand.skip_reason.empty())
    {
      skip(cand.skip_reason);
      continue;
    }
    if (!p.activation || g.layers[*p.activation].kind != LayerKind::ReLU)
    {
      skip("no ReLU between the pair");
      continue;
    }
    const Layer &l2 = g.layers[p.second];
    if (l2.kind != LayerKind::Linear && l2.padding != 0)
    {
      skip("zero padding in the second layer");
      continue;
    }
    std::vector<double> c;
    std::string mode;
    if (calib)
    {
      const auto trace = run_graph(g, ag::Var(*calib), ExecMode::FP);
      const Tensor &pre = trace.values[p.first + 1].value();
      const std::size_t ch = g.layers[p.first].weight.dim(0);
      const std::size_t inner = pre.rank() >= 2 ? inner_size(pre) : 1;
      c.assign(ch, std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < pre.numel(); ++i)
      {
        auto &m = c[(i / inner) % ch];
        m = std::min(m, pre[i]);
      }
      for (auto &v : c)
        v = std::max(0.0, v);
      mode = "empirical";
    }
    else if (g.layers[p.first].bn_meta)
    {
      c = absorbable_constant_bn(*g.layers[p.first].bn_meta);
      mode = "bn";
    }
    else if (strict)
      throw ConfigError("absorb_bias: layer '" + n1 + "' has no BN metadata and no calibration data was given");
    else
    {
      skip("no BN metadata and no calibration data");
      continue;
    }
    const auto shift = weight_times_channel_constant(g.layers[p.second], c);
    Layer &l1 = g.layers[p.first];
    for (std::size_t i = 0; i < c.size(); ++i)
      l1.bias[i] -= c[i];
    if (l1.bn_meta)
      for (std::size_t i = 0; i < c.size(); ++i)
        l1.bn_meta->beta[i] -= c[i];
    Layer &l2m = g.layers[p.second];
    for (std::size_t o = 0; o < shift.size(); ++o)
      l2m.bias[o] += shift[o];
    pairs.push_back({{"first", n1}, {"second", n2}, {"mode", mode}, {"c", c}});
  }
  res.record = json{{"pairs", pairs}, {"skipped", skipped}};
  return res;
}

// ---- bias correction ----------------------------------------------------------------

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// E[clip(X, 0, hi)] for X ~ N(beta, gamma^2); hi may be +inf.
inline double clipped_gaussian_mean(double beta, double gamma, double hi = std::numeric_limits<double>::infinity())
{
  const double sigma = std::abs(gamma);
  if (sigma == 0.0)
    return std::clamp(beta, 0.0, hi);
  const double a = -beta / sigma;
  double mean = sigma * normal_pdf(a) + beta * (1.0 - normal_cdf(a));
  if (std::isfinite(hi))
  {
    const double b = (hi - beta) / sigma;
    // Remove the mass above hi from the one-sided formula and add it back at hi.
    mean -= sigma * normal_pdf(b) + beta * (1.0 - normal_cdf(b));
    mean += hi * (1.0 - normal_cdf(b));
  }
  return mean;
}

/// E[ReLU(X)] = gamma N(-beta/gamma) + beta (1 - Phi(-beta/gamma)).
inline double relu_gaussian_mean(double beta, double gamma) { return clipped_gaussian_mean(beta, gamma); }

/// Copy with only weight quantizers active.
inline Graph weights_only(const Graph &g)
{
  return with_enabled_slots(g, [](const QuantSlot &s) { return s.kind == SlotKind::Weight; });
}

struct BiasCorrectionResult
{
  Graph graph;
  json record;
};

/**
 * Empirical bias correction. Layers are visited in order; each bias absorbs the gap
 * between the per-channel mean of the quantized model's pre-activation (activation
 * quantizers bypassed, earlier layers already corrected) and the FP model's.
 */
inline BiasCorrectionResult bias_correct_empirical(const Graph &input, const Tensor &calib)
{
  if (calib.empty() || calib.dim(0) == 0)
    throw ContractError("bias_correct_empirical needs a non-empty calibration set");
  BiasCorrectionResult res{input, json::object()};
  Graph &g = res.graph;
  const auto fp = run_graph(input, ag::Var(calib), ExecMode::FP);
  json layers = json::array();
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    if (!is_mac(g.layers[k].kind))
      continue;
    const auto q = run_graph(weights_only(g), ag::Var(calib), ExecMode::Sim);
    const auto mq = ops::channel_mean(q.raw[k + 1].value());
    const auto mf = ops::channel_mean(fp.raw[k + 1].value());
    double norm = 0.0;
    for (std::size_t c = 0; c < mq.size(); ++c)
    {
      const double d = mq[c] - mf[c];
      g.layers[k].bias[c] -= d;
      norm += d * d;
    }
    layers.push_back({{"layer", g.layers[k].name}, {"correction_norm", std::sqrt(norm)}});
  }
  res.record = json{{"mode", "empirical"}, {"layers", layers}, {"skipped", json::array()}};
  return res;
}

/// Expected input of layer k per input channel from upstream BN metadata, if derivable.
inline std::optional<std::vector<double>> analytic_input_mean(const Graph &g, std::size_t k, std::string *why)
{
  std::size_t v = g.layers[k].inputs[0];
  std::size_t expand = 1; // features per channel after a flatten
  const auto shapes = infer_shapes(g, 1);
  if (v > 0 && g.layers[v - 1].kind == LayerKind::Flatten)
  {
    const std::size_t src = g.layers[v - 1].inputs[0];
    expand = shape_numel(shapes[src]) / shapes[src][1];
    v = src;
  }
  if (v == 0 || !is_activation(g.layers[v - 1].kind))
  {
    *why = "input is not a ReLU/ReLU6 output";
    return std::nullopt;
  }
  const Layer &act = g.layers[v - 1];
  const std::size_t pre = act.inputs[0];
  if (pre == 0 || !g.layers[pre - 1].bn_meta)
  {
    *why = "no BN metadata upstream";
    return std::nullopt;
  }
  const BnMeta &m = *g.layers[pre - 1].bn_meta;
  std::vector<double> e;
  for (std::size_t c = 0; c < m.beta.size(); ++c)
  {
    double hi = std::numeric_limits<double>::infinity();
    if (act.kind == LayerKind::ReLU6)
      hi = act.clip.empty() ? 6.0 : act.clip[c];
    const double mean = clipped_gaussian_mean(m.beta[c], m.gamma[c], hi);
    for (std::size_t i = 0; i < expand; ++i)
      e.push_back(mean);
  }
  return e;
}

/// Data-free bias correction: b <- b - dW E[x] with E[x] from the clipped-normal model.
inline BiasCorrectionResult bias_correct_analytic(const Graph &input)
{
  BiasCorrectionResult res{input, json::object()};
  Graph &g = res.graph;
  const Placement p = placement(g);
  json layers = json::array(), skipped = json::array();
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    Layer &l = g.layers[k];
    if (!is_mac(l.kind))
      continue;
    std::string why;
    const auto ex = analytic_input_mean(g, k, &why);
    const int ws = p.weight_slot[k];
    if (ex && (ws < 0 || !g.slots[static_cast<std::size_t>(ws)].spec))
      why = "weight quantizer not fitted";
    if (!ex || !why.empty())
    {
      skipped.push_back({{"layer", l.name}, {"reason", why}});
      continue;
    }
    const Tensor wq = fake_quant(l.weight, *g.slots[static_cast<std::size_t>(ws)].spec);
    Layer delta = l;
    delta.weight = ops::sub(wq, l.weight);
    const auto shift = weight_times_channel_constant(delta, *ex);
    double norm = 0.0;
    for (std::size_t c = 0; c < shift.size(); ++c)
    {
      l.bias[c] -= shift[c];
      norm += shift[c] * shift[c];
    }
    layers.push_back({{"layer", l.name}, {"correction_norm", std::sqrt(norm)}});
  }
  res.record = json{{"mode", "analytic"}, {"layers", layers}, {"skipped", skipped}};
  return res;
}

} // namespace quantkit

#endif // QUANTKIT_PTQ_TRANSFORMS_HPP
