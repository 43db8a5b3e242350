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

#ifndef QUANTKIT_QUANTIZER_HPP
#define QUANTKIT_QUANTIZER_HPP

#include "quantkit/error.hpp"
#include "quantkit/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace quantkit
{

enum class Scheme
{
  AsymmetricUnsigned,
  SymmetricSigned,
  SymmetricUnsigned,
  PowerOfTwoSigned,
};

enum class Granularity
{
  PerTensor,
  PerChannel,
};

inline std::string_view to_string(Scheme s)
{
  switch (s)
  {
    case Scheme::AsymmetricUnsigned:
      return "asymmetric";
    case Scheme::SymmetricSigned:
      return "symmetric_signed";
    case Scheme::SymmetricUnsigned:
      return "symmetric_unsigned";
    case Scheme::PowerOfTwoSigned:
      return "power_of_two";
  }
  return "?";
}

inline Scheme scheme_from_string(std::string_view s)
{
  if (s == "asymmetric")
    return Scheme::AsymmetricUnsigned;
  if (s == "symmetric_signed" || s == "symmetric")
    return Scheme::SymmetricSigned;
  if (s == "symmetric_unsigned")
    return Scheme::SymmetricUnsigned;
  if (s == "power_of_two")
    return Scheme::PowerOfTwoSigned;
  throw ConfigError("unknown quantization scheme '" + std::string(s) + "'");
}

inline bool is_signed_grid(Scheme s) { return s == Scheme::SymmetricSigned || s == Scheme::PowerOfTwoSigned; }

/// Integer grid limits n, p with q_min = s*n and q_max = s*p.
struct IntGridLimits
{
  std::int64_t n;
  std::int64_t p;
};

/// Round-half-to-even; relies on the default FE_TONEAREST rounding mode.
inline double round_half_even(double v) { return std::nearbyint(v); }

/// Quantization parameters of one quantizer block.
struct QuantizerSpec
{
  Scheme scheme = Scheme::AsymmetricUnsigned;
  int bitwidth = 8;
  Granularity granularity = Granularity::PerTensor;
  std::size_t axis = 0;
  std::vector<double> scale{1.0};
  std::vector<std::int64_t> zero_point{0};

  std::size_t groups() const noexcept { return scale.size(); }

  /// Storage code range of x_int.
  std::int64_t code_min() const { return is_signed_grid(scheme) ? -(std::int64_t{1} << (bitwidth - 1)) : 0; }
  std::int64_t code_max() const
  {
    return is_signed_grid(scheme) ? (std::int64_t{1} << (bitwidth - 1)) - 1 : (std::int64_t{1} << bitwidth) - 1;
  }

  IntGridLimits int_limits(std::size_t group = 0) const
  {
    const auto z = zero_point.at(group);
    return {code_min() - z, code_max() - z};
  }

  void validate() const
  {
    if (bitwidth < 2 || bitwidth > 16)
      throw ContractError("bit-width " + std::to_string(bitwidth) + " outside [2,16]");
    if (scale.empty() || scale.size() != zero_point.size())
      throw ContractError("quantizer spec needs one (scale, zero_point) pair per group");
    if (granularity == Granularity::PerTensor && scale.size() != 1)
      throw ContractError("per-tensor spec with " + std::to_string(scale.size()) + " groups");
    for (std::size_t g = 0; g < scale.size(); ++g)
    {
      if (!(scale[g] > 0.0) || !std::isfinite(scale[g]))
        throw ContractError("scale must be positive and finite (group " + std::to_string(g) + ")");
      if (scheme == Scheme::AsymmetricUnsigned)
      {
        if (zero_point[g] < 0 || zero_point[g] > code_max())
          throw ContractError("zero-point " + std::to_string(zero_point[g]) + " outside [0, 2^b-1]");
      }
      else if (zero_point[g] != 0)
        throw ContractError("zero-point must be 0 for symmetric and power-of-two schemes");
      if (scheme == Scheme::PowerOfTwoSigned)
      {
        const double e = std::log2(scale[g]);
        if (e != std::round(e))
          throw ContractError("power-of-two scale " + std::to_string(scale[g]) + " is not 2^-k");
      }
    }
  }

  /// Group index of flat element i of a tensor with the given shape.
  std::size_t group_of(const Shape &shape, std::size_t i) const
  {
    if (granularity == Granularity::PerTensor)
      return 0;
    std::size_t after = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d)
      after *= shape[d];
    return (i / after) % shape[axis];
  }

  void check_tensor(const Tensor &x) const
  {
    if (granularity == Granularity::PerChannel)
    {
      if (axis >= x.rank())
        throw DimensionError("per-channel axis " + std::to_string(axis) + " missing in tensor " + shape_str(x.shape()));
      if (x.dim(axis) != groups())
        throw DimensionError("per-channel spec has " + std::to_string(groups()) + " groups but axis has " +
                             std::to_string(x.dim(axis)));
    }
  }

  bool operator==(const QuantizerSpec &) const = default;
};

inline QuantizerSpec make_spec(Scheme scheme, int bits, double scale, std::int64_t zero_point = 0)
{
  QuantizerSpec s;
  s.scheme = scheme;
  s.bitwidth = bits;
  s.scale = {scale};
  s.zero_point = {zero_point};
  s.validate();
  return s;
}

/// Signed power-of-two spec with s = 2^-k.
inline QuantizerSpec make_pot_spec(int k, int bits) { return make_spec(Scheme::PowerOfTwoSigned, bits, std::ldexp(1.0, -k)); }

/// Integer tensor with a declared logical bit-width.
struct IntTensor
{
  Shape shape;
  std::vector<std::int32_t> values;
  int bitwidth = 8;
  bool is_signed = false;

  std::size_t numel() const noexcept { return values.size(); }
};

namespace detail
{

inline std::int64_t quantize_value(double x, double s, std::int64_t z, std::int64_t lo, std::int64_t hi)
{
  const double r = round_half_even(x / s) + static_cast<double>(z);
  if (r < static_cast<double>(lo))
    return lo;
  if (r > static_cast<double>(hi))
    return hi;
  return static_cast<std::int64_t>(r);
}

inline double dequantize_value(std::int64_t q, double s, std::int64_t z) { return s * static_cast<double>(q - z); }

} // namespace detail

/// x_int = clamp(round(x/s) + z; code range).
inline IntTensor quantize_int(const Tensor &x, const QuantizerSpec &spec)
{
  spec.validate();
  spec.check_tensor(x);
  IntTensor out{x.shape(), std::vector<std::int32_t>(x.numel()), spec.bitwidth, is_signed_grid(spec.scheme)};
  const auto lo = spec.code_min(), hi = spec.code_max();
  for (std::size_t i = 0; i < x.numel(); ++i)
  {
    const auto g = spec.group_of(x.shape(), i);
    out.values[i] = static_cast<std::int32_t>(detail::quantize_value(x[i], spec.scale[g], spec.zero_point[g], lo, hi));
  }
  return out;
}

/// x_hat = s (x_int - z).
inline Tensor dequantize(const IntTensor &q, const QuantizerSpec &spec)
{
  spec.validate();
  Tensor out(q.shape);
  spec.check_tensor(out);
  const auto lo = spec.code_min(), hi = spec.code_max();
  for (std::size_t i = 0; i < q.numel(); ++i)
  {
    if (q.values[i] < lo || q.values[i] > hi)
      throw ContractError("integer " + std::to_string(q.values[i]) + " at index " + std::to_string(i) +
                          " outside the quantization grid");
    const auto g = spec.group_of(q.shape, i);
    out[i] = detail::dequantize_value(q.values[i], spec.scale[g], spec.zero_point[g]);
  }
  return out;
}

/// Quantize-dequantize in real arithmetic.
inline Tensor fake_quant(const Tensor &x, const QuantizerSpec &spec) { return dequantize(quantize_int(x, spec), spec); }

/// (q_min, q_max) of one group.
inline std::pair<double, double> grid_limits(const QuantizerSpec &spec, std::size_t group = 0)
{
  const auto lim = spec.int_limits(group);
  const double s = spec.scale.at(group);
  return {s * static_cast<double>(lim.n), s * static_cast<double>(lim.p)};
}

/// dx_hat/dx under the STE: upstream where q_min <= x <= q_max, else 0.
inline Tensor ste_grad_input(const Tensor &x, const QuantizerSpec &spec, const Tensor &upstream)
{
  require_same_shape(x, upstream, "ste_grad_input");
  spec.check_tensor(x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
  {
    const auto [qmin, qmax] = grid_limits(spec, spec.group_of(x.shape(), i));
    out[i] = (x[i] >= qmin && x[i] <= qmax) ? upstream[i] : 0.0;
  }
  return out;
}

/// Elementwise dx_hat/ds: -x/s + round(x/s) inside the grid, n below, p above.
inline double ste_scale_term(double x, double s, IntGridLimits lim)
{
  const double qmin = s * static_cast<double>(lim.n), qmax = s * static_cast<double>(lim.p);
  if (x < qmin)
    return static_cast<double>(lim.n);
  if (x > qmax)
    return static_cast<double>(lim.p);
  return -x / s + round_half_even(x / s);
}

/// Per-group gradient w.r.t. the scale, contracted against upstream.
inline std::vector<double> ste_grad_scale(const Tensor &x, const QuantizerSpec &spec, const Tensor &upstream)
{
  require_same_shape(x, upstream, "ste_grad_scale");
  spec.check_tensor(x);
  std::vector<double> g(spec.groups(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i)
  {
    const auto grp = spec.group_of(x.shape(), i);
    g[grp] += upstream[i] * ste_scale_term(x[i], spec.scale[grp], spec.int_limits(grp));
  }
  return g;
}

/// Per-group gradient w.r.t. a (real-valued) zero-point: 0 inside the grid, -s outside.
inline std::vector<double> ste_grad_zero_point(const Tensor &x, const QuantizerSpec &spec, const Tensor &upstream)
{
  if (spec.scheme != Scheme::AsymmetricUnsigned)
    throw ContractError("zero-point gradient requested for a " + std::string(to_string(spec.scheme)) + " quantizer");
  require_same_shape(x, upstream, "ste_grad_zero_point");
  spec.check_tensor(x);
  std::vector<double> g(spec.groups(), 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i)
  {
    const auto grp = spec.group_of(x.shape(), i);
    const auto [qmin, qmax] = grid_limits(spec, grp);
    if (x[i] < qmin || x[i] > qmax)
      g[grp] += upstream[i] * -spec.scale[grp];
  }
  return g;
}

} // namespace quantkit

#endif // QUANTKIT_QUANTIZER_HPP
