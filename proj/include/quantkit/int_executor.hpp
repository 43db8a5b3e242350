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

#ifndef QUANTKIT_INT_EXECUTOR_HPP
#define QUANTKIT_INT_EXECUTOR_HPP

#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

// Integer reference of a fixed-point accelerator: b-bit weights and activations,
// 32-bit accumulators with checked arithmetic, bias at accumulator precision, and
// requantization in double precision with the simulator's rounding.

namespace quantkit
{

namespace checked
{

inline std::int32_t add(std::int32_t a, std::int32_t b, const char *where)
{
  std::int32_t r;
  if (__builtin_add_overflow(a, b, &r))
    throw OverflowError(std::string("int32 accumulator overflow in ") + where + ": " + std::to_string(a) + " + " +
                        std::to_string(b));
  return r;
}

inline std::int32_t mul(std::int32_t a, std::int32_t b, const char *where)
{
  std::int32_t r;
  if (__builtin_mul_overflow(a, b, &r))
    throw OverflowError(std::string("int32 product overflow in ") + where + ": " + std::to_string(a) + " * " +
                        std::to_string(b));
  return r;
}

inline std::int32_t narrow(std::int64_t v, const char *where)
{
  if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max())
    throw OverflowError(std::string("value ") + std::to_string(v) + " does not fit int32 in " + where);
  return static_cast<std::int32_t>(v);
}

} // namespace checked

/// 32-bit accumulators laid out like the layer output; scale[c] = s_w,c * s_x along axis 1.
struct Accumulator
{
  Shape shape;
  std::vector<std::int32_t> values;
  std::vector<double> scale;
};

/// Largest |sum_k (w - z_w)(x - z_x)| for the given code widths and inner dimension.
inline std::int64_t accumulator_worst_case(int wbits, int xbits, std::int64_t inner)
{
  // Offsets of unsigned codes from any zero-point in range span 2^b - 1.
  const std::int64_t wmax = (std::int64_t{1} << wbits) - 1;
  const std::int64_t xmax = (std::int64_t{1} << xbits) - 1;
  return wmax * xmax * inner;
}

inline bool accumulator_fits_int32(int wbits, int xbits, std::int64_t inner)
{
  return accumulator_worst_case(wbits, xbits, inner) <= std::numeric_limits<std::int32_t>::max();
}

/// A_n = b_n + sum_m W[n,m] x[m] on raw codes. x [N,in], w [out,in].
inline Accumulator int_linear(const IntTensor &x, const IntTensor &w, std::span<const std::int32_t> bias)
{
  if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[1])
    throw DimensionError("int_linear: x " + shape_str(x.shape) + " vs w " + shape_str(w.shape));
  const std::size_t n = x.shape[0], in = x.shape[1], out = w.shape[0];
  if (!bias.empty() && bias.size() != out)
    throw DimensionError("int_linear: bias length");
  Accumulator acc{{n, out}, std::vector<std::int32_t>(n * out), {}};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o)
    {
      std::int32_t a = bias.empty() ? 0 : bias[o];
      for (std::size_t i = 0; i < in; ++i)
        a = checked::add(a, checked::mul(w.values[o * in + i], x.values[r * in + i], "int_linear"), "int_linear");
      acc.values[r * out + o] = a;
    }
  return acc;
}

/**
 * sum_m (W[n,m] - z_w,n)(x[m] - z_x) + b_n via the four-term expansion:
 * sum W x - z_w sum x - z_x sum W + K z_w z_x. Terms 3 and 4 depend only on the weights
 * and are folded into the bias as -z_x sum (W - z_w).
 */
inline Accumulator asymmetric_expand(const IntTensor &x, const IntTensor &w, std::span<const std::int32_t> zw,
                                     std::int32_t zx, std::span<const std::int32_t> bias)
{
  if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[1])
    throw DimensionError("asymmetric_expand: x " + shape_str(x.shape) + " vs w " + shape_str(w.shape));
  const std::size_t n = x.shape[0], in = x.shape[1], out = w.shape[0];
  if (zw.size() != out && zw.size() != 1)
    throw DimensionError("asymmetric_expand: weight zero-point count");
  auto z_of = [&](std::size_t o) { return zw.size() == 1 ? zw[0] : zw[o]; };
  std::vector<std::int32_t> folded(out);
  for (std::size_t o = 0; o < out; ++o)
  {
    std::int32_t centered = 0;
    for (std::size_t i = 0; i < in; ++i)
      centered = checked::add(centered, w.values[o * in + i] - z_of(o), "asymmetric_expand");
    folded[o] = checked::mul(-zx, centered, "asymmetric_expand");
    if (!bias.empty())
      folded[o] = checked::add(folded[o], bias[o], "asymmetric_expand");
  }
  Accumulator acc{{n, out}, std::vector<std::int32_t>(n * out), {}};
  for (std::size_t r = 0; r < n; ++r)
  {
    std::int32_t xsum = 0;
    for (std::size_t i = 0; i < in; ++i)
      xsum = checked::add(xsum, x.values[r * in + i], "asymmetric_expand");
    for (std::size_t o = 0; o < out; ++o)
    {
      std::int32_t wx = 0;
      for (std::size_t i = 0; i < in; ++i)
        wx = checked::add(wx, checked::mul(w.values[o * in + i], x.values[r * in + i], "asymmetric_expand"),
                          "asymmetric_expand");
      std::int32_t a = checked::add(wx, checked::mul(-z_of(o), xsum, "asymmetric_expand"), "asymmetric_expand");
      acc.values[r * out + o] = checked::add(a, folded[o], "asymmetric_expand");
    }
  }
  return acc;
}

/// The direct form in 64-bit integers (test oracle for the expansion).
inline std::vector<std::int64_t> direct_product(const IntTensor &x, const IntTensor &w, std::span<const std::int32_t> zw,
                                                std::int32_t zx)
{
  const std::size_t n = x.shape[0], in = x.shape[1], out = w.shape[0];
  std::vector<std::int64_t> r(n * out, 0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out; ++o)
    {
      const std::int64_t z = zw.size() == 1 ? zw[0] : zw[o];
      for (std::size_t i = 0; i < in; ++i)
        r[b * out + o] += (std::int64_t{w.values[o * in + i]} - z) * (std::int64_t{x.values[b * in + i]} - zx);
    }
  return r;
}

/// Zero-padded integer convolution on zero-point-centred codes.
inline Accumulator int_conv2d(const IntTensor &x, std::int32_t zx, const IntTensor &w, std::span<const std::int32_t> zw,
                              std::span<const std::int32_t> bias, std::size_t stride, std::size_t pad, bool depthwise)
{
  const Tensor xs(x.shape), ws(w.shape);
  const auto g = ops::conv_geometry(xs, ws, stride, pad, depthwise);
  const std::size_t cin = g.cin_per_group();
  Accumulator acc{{g.n, g.k, g.oh, g.ow}, std::vector<std::int32_t>(g.n * g.k * g.oh * g.ow), {}};
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t k = 0; k < g.k; ++k)
    {
      const std::int32_t z = zw.size() == 1 ? zw[0] : zw[k];
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
        {
          std::int32_t a = bias.empty() ? 0 : bias[k];
          for (std::size_t ci = 0; ci < cin; ++ci)
          {
            const std::size_t c = depthwise ? k : ci;
            for (std::size_t ky = 0; ky < g.kh; ++ky)
            {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              if (iy < 0 || iy >= static_cast<long>(g.h))
                continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx)
              {
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (ix < 0 || ix >= static_cast<long>(g.w))
                  continue;
                const std::int32_t wv = w.values[((k * cin + ci) * g.kh + ky) * g.kw + kx] - z;
                const std::int32_t xv =
                    x.values[((b * g.c + c) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] -
                    zx;
                a = checked::add(a, checked::mul(wv, xv, "int_conv2d"), "int_conv2d");
              }
            }
          }
          acc.values[((b * g.k + k) * g.oh + oy) * g.ow + ox] = a;
        }
    }
  return acc;
}

/// Output spec plus optional clamps of a fused activation, in real units.
struct RequantParams
{
  QuantizerSpec out;
  bool relu = false;
  std::vector<double> upper; // per-channel clip (ReLU6); empty: none
};

/// y = clamp(round(acc * (s_w s_x / s_out)) + z_out; grid), fused activation as clamps.
inline IntTensor requantize(const Accumulator &acc, const RequantParams &rq)
{
  rq.out.validate();
  if (rq.out.granularity != Granularity::PerTensor)
    throw ContractError("requantize: activation specs are per-tensor");
  const double s = rq.out.scale[0];
  const std::int64_t z = rq.out.zero_point[0];
  const std::size_t c = acc.shape.size() >= 2 ? acc.shape[1] : 1;
  std::size_t inner = 1;
  for (std::size_t d = 2; d < acc.shape.size(); ++d)
    inner *= acc.shape[d];
  IntTensor out{acc.shape, std::vector<std::int32_t>(acc.values.size()), rq.out.bitwidth, is_signed_grid(rq.out.scheme)};
  for (std::size_t i = 0; i < acc.values.size(); ++i)
  {
    const std::size_t ch = (i / inner) % c;
    const double comb = acc.scale.size() == 1 ? acc.scale[0] : acc.scale[ch];
    std::int64_t lo = rq.out.code_min(), hi = rq.out.code_max();
    if (rq.relu)
      lo = std::max(lo, z);
    if (!rq.upper.empty())
      hi = std::min(hi, static_cast<std::int64_t>(round_half_even(rq.upper[ch] / s)) + z);
    // rescale first, then divide: the simulator's rounding of (acc*comb)/s exactly
    const double r = round_half_even(static_cast<double>(acc.values[i]) * comb / s) + static_cast<double>(z);
    out.values[i] = static_cast<std::int32_t>(std::clamp(r, static_cast<double>(lo), static_cast<double>(hi)));
  }
  return out;
}

/// v * 2^-shift rounded half-to-even (arithmetic shift for a power-of-two multiplier).
inline std::int64_t rounding_shift_half_even(std::int64_t v, int shift)
{
  if (shift <= 0)
    return v * (std::int64_t{1} << -shift);
  const std::int64_t q = v >> shift; // floor
  const std::int64_t rem = v - (q << shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1) != 0))
    return q + 1;
  return q;
}

/// Requantization of a power-of-two accumulator by shifting: exponent e with M = 2^e.
inline IntTensor requantize_shift(const Accumulator &acc, int exponent, const QuantizerSpec &out, bool relu = false)
{
  const std::int64_t z = out.zero_point.at(0);
  std::int64_t lo = out.code_min(), hi = out.code_max();
  if (relu)
    lo = std::max(lo, z);
  IntTensor r{acc.shape, std::vector<std::int32_t>(acc.values.size()), out.bitwidth, is_signed_grid(out.scheme)};
  for (std::size_t i = 0; i < acc.values.size(); ++i)
    r.values[i] = static_cast<std::int32_t>(std::clamp(rounding_shift_half_even(acc.values[i], -exponent) + z, lo, hi));
  return r;
}

// ---- whole-graph execution ----------------------------------------------------------

namespace detail
{

inline const QuantizerSpec &frozen_spec(const Graph &g, int slot, const std::string &what)
{
  if (slot < 0)
    throw ConfigError("integer engine: no quantizer governs " + what);
  const auto &s = g.slots[static_cast<std::size_t>(slot)];
  if (!s.enabled)
    throw ConfigError("integer engine: quantizer '" + s.id + "' is bypassed");
  if (!s.spec)
    throw ConfigError("integer engine: quantizer '" + s.id + "' is not fitted");
  if (s.spec->granularity != Granularity::PerTensor && s.kind == SlotKind::Activation)
    throw ConfigError("integer engine: per-channel activation quantizer '" + s.id + "'");
  return *s.spec;
}

inline std::int32_t input_zero_point(const QuantizerSpec &s) { return static_cast<std::int32_t>(s.zero_point[0]); }

/// Combined accumulator scale s_w,c * s_x per output channel.
inline std::vector<double> combined_scale(const QuantizerSpec &w, const QuantizerSpec &x, std::size_t channels)
{
  std::vector<double> s(channels);
  for (std::size_t c = 0; c < channels; ++c)
    s[c] = w.scale[w.groups() == 1 ? 0 : c] * x.scale[0];
  return s;
}

} // namespace detail

/// Integer bias round(b / (s_w s_x)) per output channel.
inline std::vector<std::int32_t> quantize_bias(const Tensor &bias, std::span<const double> combined)
{
  std::vector<std::int32_t> b(bias.numel());
  for (std::size_t c = 0; c < b.size(); ++c)
    b[c] = checked::narrow(static_cast<std::int64_t>(round_half_even(bias[c] / combined[c])), "bias quantization");
  return b;
}

/**
 * Prepare a fitted graph for deployment: every bias is moved onto its accumulator
 * grid s_w s_x, so the simulator and the integer engine see the same bias.
 */
inline Graph freeze_for_integer(const Graph &input)
{
  Graph g = input;
  const Placement p = placement(g);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    Layer &l = g.layers[k];
    if (!is_mac(l.kind))
      continue;
    const auto &ws = detail::frozen_spec(g, p.weight_slot[k], "the weights of '" + l.name + "'");
    const auto &xs = detail::frozen_spec(g, p.grid_slot[l.inputs[0]], "the input of '" + l.name + "'");
    const auto comb = detail::combined_scale(ws, xs, l.weight.dim(0));
    const auto bi = quantize_bias(l.bias, comb);
    for (std::size_t c = 0; c < bi.size(); ++c)
    {
      // the simulator recovers the code as b/comb, so that division must be exact
      const double code = static_cast<double>(bi[c]);
      double b = code * comb[c], up = b, down = b;
      for (int step = 0; step < 4 && b / comb[c] != code; ++step)
      {
        up = std::nextafter(up, std::numeric_limits<double>::infinity());
        down = std::nextafter(down, -std::numeric_limits<double>::infinity());
        b = up / comb[c] == code ? up : down / comb[c] == code ? down : b;
      }
      l.bias[c] = b;
    }
  }
  for (const auto &s : g.slots)
    detail::frozen_spec(g, g.slot_index(s.id), s.id);
  return g;
}

/// Integer value flowing between layers.
struct IntValue
{
  enum class Kind
  {
    Grid, // codes on the grid of `slot`
    Acc,  // 32-bit accumulators awaiting a fused activation
    Real, // off-grid real result awaiting a fused activation
  } kind = Kind::Grid;
  IntTensor q;
  int slot = -1;
  Accumulator acc;
  Tensor real;
};

/// Dequantized output of the integer pipeline.
inline Tensor run_int_graph(const Graph &g, const Tensor &x)
{
  check_input(g, x);
  const Placement p = placement(g);
  std::vector<IntValue> vals(g.num_values());
  auto spec_of = [&](int slot, const std::string &what) -> const QuantizerSpec & {
    return detail::frozen_spec(g, slot, what);
  };
  auto as_real = [&](const IntValue &v) -> Tensor {
    switch (v.kind)
    {
      case IntValue::Kind::Grid:
        return dequantize(v.q, spec_of(v.slot, "a value"));
      case IntValue::Kind::Real:
        return v.real;
      case IntValue::Kind::Acc:
        break;
    }
    throw ContractError("integer engine: accumulator consumed by a non-activation layer");
  };
  auto grid_value = [&](IntTensor q, int slot) {
    IntValue v;
    v.kind = IntValue::Kind::Grid;
    v.q = std::move(q);
    v.slot = slot;
    return v;
  };
  vals[0] = grid_value(quantize_int(x, spec_of(p.act_slot[0], "the graph input")), p.act_slot[0]);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    const std::size_t v = k + 1;
    const IntValue &in = vals[l.inputs[0]];
    const int own = p.act_slot[v];
    switch (l.kind)
    {
      case LayerKind::Linear:
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
      {
        if (in.kind != IntValue::Kind::Grid)
          throw ContractError("integer engine: input of '" + l.name + "' is not on a grid");
        const auto &xs = spec_of(in.slot, "the input of '" + l.name + "'");
        const auto &ws = spec_of(p.weight_slot[k], "the weights of '" + l.name + "'");
        const IntTensor wq = quantize_int(l.weight, ws);
        std::vector<std::int32_t> zw(ws.zero_point.begin(), ws.zero_point.end());
        const auto comb = detail::combined_scale(ws, xs, l.weight.dim(0));
        const auto bias = quantize_bias(l.bias, comb);
        Accumulator acc = l.kind == LayerKind::Linear
                              ? asymmetric_expand(in.q, wq, zw, detail::input_zero_point(xs), bias)
                              : int_conv2d(in.q, detail::input_zero_point(xs), wq, zw, bias, l.stride, l.padding,
                                           l.kind == LayerKind::DepthwiseConv2d);
        acc.scale = comb;
        if (own >= 0)
          vals[v] = grid_value(requantize(acc, {spec_of(own, l.name), false, {}}), own);
        else
        {
          vals[v].kind = IntValue::Kind::Acc;
          vals[v].acc = std::move(acc);
        }
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::ReLU6:
      {
        const auto &os = spec_of(own, "the output of '" + l.name + "'");
        std::vector<double> upper;
        if (l.kind == LayerKind::ReLU6)
        {
          const std::size_t c = in.kind == IntValue::Kind::Acc ? in.acc.shape[1]
                                                               : (in.kind == IntValue::Kind::Real ? in.real.dim(1) : in.q.shape[1]);
          upper = l.clip.empty() ? std::vector<double>(c, 6.0) : l.clip;
        }
        if (in.kind == IntValue::Kind::Acc)
          vals[v] = grid_value(requantize(in.acc, {os, true, upper}), own);
        else
        {
          const Tensor r = as_real(in);
          vals[v] = grid_value(quantize_int(l.kind == LayerKind::ReLU ? ops::relu(r) : ops::relu6(r, l.clip), os), own);
        }
        break;
      }
      case LayerKind::Add:
      {
        if (l.tied)
        {
          const auto &os = spec_of(own, "the output of '" + l.name + "'");
          const auto z = os.zero_point[0];
          IntTensor out = in.q;
          for (std::size_t i = 1; i < l.inputs.size(); ++i)
          {
            const IntValue &o = vals[l.inputs[i]];
            if (o.kind != IntValue::Kind::Grid || o.slot != own || in.slot != own)
              throw ContractError("integer engine: tied add '" + l.name + "' operands are not on the shared grid");
            for (std::size_t j = 0; j < out.values.size(); ++j)
              out.values[j] = checked::add(out.values[j], o.q.values[j] - static_cast<std::int32_t>(z), "tied add");
          }
          for (auto &q : out.values)
            q = static_cast<std::int32_t>(std::clamp<std::int64_t>(q, os.code_min(), os.code_max()));
          vals[v] = grid_value(std::move(out), own);
          break;
        }
        Tensor sum = as_real(in);
        for (std::size_t i = 1; i < l.inputs.size(); ++i)
          sum = ops::add(sum, as_real(vals[l.inputs[i]]));
        if (own >= 0)
          vals[v] = grid_value(quantize_int(sum, spec_of(own, l.name)), own);
        else
        {
          vals[v].kind = IntValue::Kind::Real;
          vals[v].real = std::move(sum);
        }
        break;
      }
      case LayerKind::Concat:
      {
        std::vector<Tensor> parts;
        std::vector<const Tensor *> ptrs;
        for (auto i : l.inputs)
          parts.push_back(as_real(vals[i]));
        for (const auto &t : parts)
          ptrs.push_back(&t);
        vals[v] = grid_value(quantize_int(ops::concat(ptrs), spec_of(own, l.name)), own);
        break;
      }
      case LayerKind::AvgPool:
        vals[v] = grid_value(quantize_int(ops::avgpool2d(as_real(in), l.kernel), spec_of(own, l.name)), own);
        break;
      case LayerKind::MaxPool:
      {
        if (in.kind != IntValue::Kind::Grid)
          throw ContractError("integer engine: maxpool input is not on a grid");
        // Dequantization is monotone, so the max over codes is the max over values.
        Tensor codes(in.q.shape);
        for (std::size_t i = 0; i < codes.numel(); ++i)
          codes[i] = in.q.values[i];
        const Tensor m = ops::maxpool2d(codes, l.kernel);
        IntTensor q{m.shape(), std::vector<std::int32_t>(m.numel()), in.q.bitwidth, in.q.is_signed};
        for (std::size_t i = 0; i < m.numel(); ++i)
          q.values[i] = static_cast<std::int32_t>(m[i]);
        vals[v] = grid_value(std::move(q), in.slot);
        break;
      }
      case LayerKind::Flatten:
      {
        if (in.kind != IntValue::Kind::Grid)
          throw ContractError("integer engine: flatten input is not on a grid");
        IntValue out = in;
        out.q.shape = {in.q.shape[0], in.q.values.size() / in.q.shape[0]};
        vals[v] = std::move(out);
        break;
      }
      case LayerKind::BatchNorm:
        throw ConfigError("integer engine: unfolded batchnorm '" + l.name + "' is unsupported");
    }
  }
  const IntValue &out = vals.back();
  if (out.kind != IntValue::Kind::Grid)
    throw ContractError("integer engine: graph output is not quantized");
  return dequantize(out.q, spec_of(out.slot, "the graph output"));
}

} // namespace quantkit

#endif // QUANTKIT_INT_EXECUTOR_HPP
