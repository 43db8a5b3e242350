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

#ifndef QUANTKIT_EXECUTOR_HPP
#define QUANTKIT_EXECUTOR_HPP

#include "quantkit/autograd.hpp"
#include "quantkit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace quantkit
{

enum class ExecMode
{
  FP,  // quantizer slots ignored
  Sim, // fake quantization at every enabled slot
};

/// Trainable leaves that replace graph tensors during a forward pass.
struct ParamBinding
{
  std::map<std::size_t, ag::Var> weight, bias, gamma, beta; // by layer index
  std::map<std::size_t, ag::Var> log_scale, zero_point;     // by slot index, one entry per group
};

struct ForwardTrace
{
  std::vector<ag::Var> raw;    // value before its quantizer (what an observer sees)
  std::vector<ag::Var> values; // value as consumed downstream
  const ag::Var &output() const { return values.back(); }
};

inline void check_input(const Graph &g, const Tensor &x)
{
  if (x.rank() != g.input_shape.size() + 1 || !std::equal(g.input_shape.begin(), g.input_shape.end(), x.shape().begin() + 1))
    throw DimensionError("input shape " + shape_str(x.shape()) + " does not match graph input [N," +
                         shape_str(g.input_shape) + "]");
}

namespace detail
{

inline const QuantizerSpec &required_spec(const QuantSlot &s)
{
  if (!s.spec)
    throw ConfigError("quantizer '" + s.id + "' has no fitted spec");
  return *s.spec;
}

inline ag::Var apply_slot(const Graph &g, int slot, const ag::Var &v, const ParamBinding *bind)
{
  if (slot < 0)
    return v;
  const QuantSlot &s = g.slots[static_cast<std::size_t>(slot)];
  if (!s.enabled)
    return v;
  const QuantizerSpec &spec = required_spec(s);
  ag::Var scale, zp;
  if (bind)
  {
    const auto idx = static_cast<std::size_t>(slot);
    if (auto it = bind->log_scale.find(idx); it != bind->log_scale.end())
      scale = ag::exp(it->second);
    if (auto it = bind->zero_point.find(idx); it != bind->zero_point.end())
      zp = it->second;
  }
  return ag::fake_quant(v, spec, scale, zp);
}

/// Scales a slot applies in this pass; empty when the slot is absent or disabled.
inline std::vector<double> effective_scale(const Graph &g, int slot, const ParamBinding *bind)
{
  if (slot < 0 || !g.slots[static_cast<std::size_t>(slot)].enabled)
    return {};
  const QuantizerSpec &spec = required_spec(g.slots[static_cast<std::size_t>(slot)]);
  std::vector<double> s(spec.scale);
  if (bind)
    if (auto it = bind->log_scale.find(static_cast<std::size_t>(slot)); it != bind->log_scale.end())
      for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = std::exp(it->second.value()[i]);
  return s;
}

/// Grid offsets round(v/s); false when some element is not on the grid.
inline bool grid_codes(const Tensor &v, const std::vector<double> &s, std::size_t groups_dim, Tensor &out)
{
  out = Tensor(v.shape());
  std::size_t inner = 1;
  for (std::size_t d = groups_dim + 1; d < v.rank(); ++d)
    inner *= v.dim(d);
  const std::size_t c = v.dim(groups_dim);
  for (std::size_t i = 0; i < v.numel(); ++i)
  {
    const double sc = s.size() == 1 ? s[0] : s[(i / inner) % c];
    const double q = round_half_even(v[i] / sc);
    if (std::abs(q * sc - v[i]) > 1e-9 * std::max(std::abs(v[i]), sc))
      return false;
    out[i] = q;
  }
  return true;
}

/// MAC on grid offsets accumulated exactly, rescaled once per output: the integer
/// engine's arithmetic expressed in doubles, so both engines see identical pre-rounding values.
inline bool exact_mac(const Layer &l, const Tensor &x, const Tensor &w, const Tensor &b, const std::vector<double> &sx,
                      const std::vector<double> &sw, Tensor &out)
{
  if (sx.size() != 1 || (sw.size() != 1 && sw.size() != w.dim(0)))
    return false;
  Tensor cx, cw;
  if (!grid_codes(x, sx, 0, cx) || !grid_codes(w, sw, 0, cw))
    return false;
  const Tensor zero(Shape{w.dim(0)});
  out = l.kind == LayerKind::Linear
            ? ops::linear(cx, cw, zero)
            : ops::conv2d(cx, cw, zero, l.stride, l.padding, l.kind == LayerKind::DepthwiseConv2d);
  const std::size_t c = out.dim(1);
  std::size_t inner = 1;
  for (std::size_t d = 2; d < out.rank(); ++d)
    inner *= out.dim(d);
  for (std::size_t i = 0; i < out.numel(); ++i)
  {
    const std::size_t ch = (i / inner) % c;
    const double comb = (sw.size() == 1 ? sw[0] : sw[ch]) * sx[0];
    // a frozen bias sits on its accumulator grid up to the last ulp; use the code itself
    const double bc = b[ch] / comb, code = std::nearbyint(bc);
    out[i] = (out[i] + (std::abs(bc - code) <= 1e-9 * std::max(1.0, std::abs(code)) ? code : bc)) * comb;
  }
  return true;
}

inline ag::Var bound(const std::map<std::size_t, ag::Var> *m, std::size_t k, const Tensor &t)
{
  if (m)
    if (auto it = m->find(k); it != m->end())
      return it->second;
  return ag::Var(t);
}

} // namespace detail

/// Execute the graph on a batch, recording every intermediate value.
inline ForwardTrace run_graph(const Graph &g, const ag::Var &x, ExecMode mode, const ParamBinding *bind = nullptr)
{
  check_input(g, x.value());
  const bool sim = mode == ExecMode::Sim;
  Placement p;
  if (sim)
    p = placement(g);
  ForwardTrace t;
  t.raw.reserve(g.num_values());
  t.values.reserve(g.num_values());
  t.raw.push_back(x);
  t.values.push_back(sim ? detail::apply_slot(g, p.act_slot[0], x, bind) : x);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    const ag::Var &in = t.values[l.inputs[0]];
    ag::Var y;
    auto param = [&](const std::map<std::size_t, ag::Var> ParamBinding::*field, const Tensor &tensor) {
      return detail::bound(bind ? &(bind->*field) : nullptr, k, tensor);
    };
    switch (l.kind)
    {
      case LayerKind::Linear:
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
      {
        ag::Var w = param(&ParamBinding::weight, l.weight);
        if (sim)
          w = detail::apply_slot(g, p.weight_slot[k], w, bind);
        const ag::Var b = param(&ParamBinding::bias, l.bias);
        const bool grad = in.requires_grad() || w.requires_grad() || b.requires_grad();
        Tensor exact;
        const bool on_grid =
            sim && detail::exact_mac(l, in.value(), w.value(), b.value(),
                                     detail::effective_scale(g, p.grid_slot[l.inputs[0]], bind),
                                     detail::effective_scale(g, p.weight_slot[k], bind), exact);
        if (on_grid && !grad)
        {
          y = ag::Var(std::move(exact));
          break;
        }
        y = l.kind == LayerKind::Linear
                ? ag::linear(in, w, b)
                : ag::conv2d(in, w, b, l.stride, l.padding, l.kind == LayerKind::DepthwiseConv2d);
        if (on_grid)
        {
          // exact value forward, float MAC's gradient backward
          auto src = y.node();
          y = ag::make_op(std::move(exact), {y}, "exact_mac", [src](ag::Node &self) { src->accumulate(self.grad); });
        }
        break;
      }
      case LayerKind::BatchNorm:
        y = ag::batchnorm(in, param(&ParamBinding::gamma, l.gamma), param(&ParamBinding::beta, l.beta), l.mean, l.var,
                          l.eps);
        break;
      case LayerKind::ReLU:
        y = ag::relu(in);
        break;
      case LayerKind::ReLU6:
        y = ag::relu6(in, l.clip);
        break;
      case LayerKind::Add:
      {
        y = in;
        for (std::size_t i = 1; i < l.inputs.size(); ++i)
          y = ag::add(y, t.values[l.inputs[i]]);
        break;
      }
      case LayerKind::Concat:
      {
        std::vector<ag::Var> parts;
        for (auto v : l.inputs)
          parts.push_back(t.values[v]);
        y = ag::concat(parts);
        break;
      }
      case LayerKind::AvgPool:
        y = ag::avgpool2d(in, l.kernel);
        break;
      case LayerKind::MaxPool:
        y = ag::maxpool2d(in, l.kernel);
        break;
      case LayerKind::Flatten:
        y = ag::flatten(in);
        break;
    }
    t.raw.push_back(y);
    t.values.push_back(sim ? detail::apply_slot(g, p.act_slot[k + 1], y, bind) : y);
  }
  return t;
}

inline Tensor forward_fp(const Graph &g, const Tensor &x) { return run_graph(g, ag::Var(x), ExecMode::FP).output().value(); }

inline Tensor forward_sim_quant(const Graph &g, const Tensor &x)
{
  return run_graph(g, ag::Var(x), ExecMode::Sim).output().value();
}

inline Tensor forward(const Graph &g, const Tensor &x, ExecMode mode)
{
  return run_graph(g, ag::Var(x), mode).output().value();
}

} // namespace quantkit

#endif // QUANTKIT_EXECUTOR_HPP
