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

#ifndef QUANTKIT_RANGE_SETTING_HPP
#define QUANTKIT_RANGE_SETTING_HPP

#include "quantkit/error.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace quantkit
{

enum class RangeMethod
{
  MinMax,
  MSE,
  CrossEntropy,
  BNBased,
};

inline std::string_view to_string(RangeMethod m)
{
  switch (m)
  {
    case RangeMethod::MinMax:
      return "minmax";
    case RangeMethod::MSE:
      return "mse";
    case RangeMethod::CrossEntropy:
      return "xent";
    case RangeMethod::BNBased:
      return "bn";
  }
  return "?";
}

struct Range
{
  double qmin = 0.0;
  double qmax = 0.0;
};

/// Values that fold an all-zero tensor onto a valid grid.
inline constexpr double kDegenerateScale = 1e-8;

/// Candidate count and clipping denominator of the grid search.
inline constexpr int kRangeCandidates = 100;
inline constexpr double kRangeClipDenominator = 120.0;
inline constexpr int kCoordinateSweeps = 2;

inline Range range_minmax(std::span<const double> v)
{
  if (v.empty())
    throw ContractError("range_minmax on an empty tensor");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

inline Range range_minmax(const Tensor &v) { return range_minmax(v.data()); }

/// Zero inclusion followed by the degenerate-range widening.
inline Range adjust_range(Range r)
{
  r.qmin = std::min(r.qmin, 0.0);
  r.qmax = std::max(r.qmax, 0.0);
  if (r.qmax == r.qmin)
    r = {std::min(0.0, r.qmin), std::max(r.qmin + kDegenerateScale, 0.0)};
  return r;
}

namespace detail
{

inline void fit_one_group(Range r, Scheme scheme, int bits, double &scale, std::int64_t &zero_point)
{
  const bool all_zero = r.qmin == 0.0 && r.qmax == 0.0;
  r = adjust_range(r);
  if (!(r.qmin < r.qmax))
    throw ContractError("empty quantization range after widening");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double half = std::ldexp(1.0, bits - 1);
  scale = 0.0;
  zero_point = 0;
  switch (scheme)
  {
    case Scheme::AsymmetricUnsigned:
    {
      scale = (r.qmax - r.qmin) / levels;
      zero_point = static_cast<std::int64_t>(std::clamp(round_half_even(-r.qmin / scale), 0.0, levels));
      break;
    }
    case Scheme::SymmetricSigned:
      scale = std::max(std::abs(r.qmin) / half, r.qmax / (half - 1.0));
      break;
    case Scheme::SymmetricUnsigned:
      scale = r.qmax / levels;
      break;
    case Scheme::PowerOfTwoSigned:
    {
      const double cont = std::max(std::abs(r.qmin) / half, r.qmax / (half - 1.0));
      const double k = round_half_even(-std::log2(cont));
      scale = std::ldexp(1.0, -static_cast<int>(k));
      break;
    }
  }
  if (all_zero || !(scale > 0.0) || !std::isfinite(scale))
  {
    scale = scheme == Scheme::PowerOfTwoSigned ? std::ldexp(1.0, -27) : kDegenerateScale;
    zero_point = 0;
  }
}

} // namespace detail

/// Per-tensor spec covering [qmin, qmax].
inline QuantizerSpec spec_from_range(Range r, Scheme scheme, int bits)
{
  QuantizerSpec spec;
  spec.scheme = scheme;
  spec.bitwidth = bits;
  detail::fit_one_group(r, scheme, bits, spec.scale[0], spec.zero_point[0]);
  spec.validate();
  return spec;
}

/// Per-channel spec with one range per slice along `axis`.
inline QuantizerSpec spec_from_ranges(std::span<const Range> ranges, Scheme scheme, int bits, std::size_t axis = 0)
{
  if (ranges.empty())
    throw ContractError("spec_from_ranges needs at least one channel");
  QuantizerSpec spec;
  spec.scheme = scheme;
  spec.bitwidth = bits;
  spec.granularity = Granularity::PerChannel;
  spec.axis = axis;
  spec.scale.assign(ranges.size(), 1.0);
  spec.zero_point.assign(ranges.size(), 0);
  for (std::size_t c = 0; c < ranges.size(); ++c)
    detail::fit_one_group(ranges[c], scheme, bits, spec.scale[c], spec.zero_point[c]);
  spec.validate();
  return spec;
}

/// Squared error of per-tensor fake quantization of v under the range.
inline double quantization_sse(std::span<const double> v, Range r, Scheme scheme, int bits)
{
  double s;
  std::int64_t z;
  detail::fit_one_group(r, scheme, bits, s, z);
  QuantizerSpec spec;
  spec.scheme = scheme;
  spec.bitwidth = bits;
  const auto lo = spec.code_min(), hi = spec.code_max();
  double sse = 0.0;
  for (double x : v)
  {
    const double e = x - detail::dequantize_value(detail::quantize_value(x, s, z, lo, hi), s, z);
    sse += e * e;
  }
  return sse;
}

namespace detail
{

/**
 * Grid search over clipped versions of the min-max range. Symmetric schemes shrink
 * both ends by the same fraction; the asymmetric scheme runs coordinate descent on
 * q_max then q_min. Only strict improvements move the incumbent, so the min-max
 * range wins ties.
 */
inline Range search_range(Range mm, Scheme scheme, const std::function<double(Range)> &objective)
{
  mm = {std::min(mm.qmin, 0.0), std::max(mm.qmax, 0.0)};
  Range best = mm;
  double best_loss = objective(best);
  auto frac = [](int i) { return 1.0 - static_cast<double>(i) / kRangeClipDenominator; };
  if (scheme != Scheme::AsymmetricUnsigned)
  {
    for (int i = 1; i < kRangeCandidates; ++i)
    {
      const Range c{mm.qmin * frac(i), mm.qmax * frac(i)};
      const double l = objective(c);
      if (l < best_loss)
      {
        best_loss = l;
        best = c;
      }
    }
    return best;
  }
  for (int sweep = 0; sweep < kCoordinateSweeps; ++sweep)
  {
    for (int end = 0; end < 2; ++end)
    {
      const Range base = best;
      for (int i = 0; i < kRangeCandidates; ++i)
      {
        Range c = base;
        if (end == 0)
          c.qmax = mm.qmax * frac(i);
        else
          c.qmin = mm.qmin * frac(i);
        const double l = objective(c);
        if (l < best_loss)
        {
          best_loss = l;
          best = c;
        }
      }
    }
  }
  return best;
}

} // namespace detail

inline Range range_mse(std::span<const double> v, Scheme scheme, int bits)
{
  const Range mm = range_minmax(v);
  return detail::search_range(mm, scheme, [&](Range r) { return quantization_sse(v, r, scheme, bits); });
}

inline Range range_mse(const Tensor &v, Scheme scheme, int bits) { return range_mse(v.data(), scheme, bits); }

/// Mean H(softmax(v), softmax(v_hat)) over logit rows of all samples.
inline double quantized_cross_entropy(std::span<const Tensor> samples, Range r, Scheme scheme, int bits)
{
  double s;
  std::int64_t z;
  detail::fit_one_group(r, scheme, bits, s, z);
  QuantizerSpec spec;
  spec.scheme = scheme;
  spec.bitwidth = bits;
  const auto lo = spec.code_min(), hi = spec.code_max();
  double total = 0.0;
  std::size_t rows = 0;
  std::vector<double> q;
  for (const auto &t : samples)
  {
    const std::size_t c = t.rank() >= 2 ? t.numel() / t.dim(0) : t.numel();
    for (std::size_t r0 = 0; r0 < t.numel(); r0 += c)
    {
      q.assign(c, 0.0);
      double mp = -std::numeric_limits<double>::infinity(), mq = mp;
      for (std::size_t j = 0; j < c; ++j)
      {
        q[j] = detail::dequantize_value(detail::quantize_value(t[r0 + j], s, z, lo, hi), s, z);
        mp = std::max(mp, t[r0 + j]);
        mq = std::max(mq, q[j]);
      }
      double zp = 0.0, zq = 0.0;
      for (std::size_t j = 0; j < c; ++j)
      {
        zp += std::exp(t[r0 + j] - mp);
        zq += std::exp(q[j] - mq);
      }
      const double lzq = std::log(zq);
      double h = 0.0;
      for (std::size_t j = 0; j < c; ++j)
      {
        const double p = std::exp(t[r0 + j] - mp) / zp;
        h -= p * (q[j] - mq - lzq);
      }
      total += h;
      ++rows;
    }
  }
  return total / static_cast<double>(rows);
}

inline Range range_cross_entropy(std::span<const Tensor> samples, Scheme scheme, int bits)
{
  if (samples.empty())
    throw ContractError("range_cross_entropy needs at least one logit sample");
  Range mm{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto &t : samples)
  {
    const Range r = range_minmax(t);
    mm.qmin = std::min(mm.qmin, r.qmin);
    mm.qmax = std::max(mm.qmax, r.qmax);
  }
  return detail::search_range(mm, scheme,
                              [&](Range r) { return quantized_cross_entropy(samples, r, scheme, bits); });
}

/// Data-free range of a batch-normalized output: [min(beta - a*gamma), max(beta + a*gamma)].
inline Range range_bn(std::span<const double> beta, std::span<const double> gamma, double alpha = 6.0)
{
  if (beta.size() != gamma.size() || beta.empty())
    throw ContractError("range_bn: beta has " + std::to_string(beta.size()) + " channels, gamma " +
                        std::to_string(gamma.size()));
  if (!(alpha > 0.0))
    throw ContractError("range_bn: alpha must be positive");
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < beta.size(); ++i)
  {
    // |gamma| keeps the interval ordered for negative scales.
    const double g = std::abs(gamma[i]);
    r.qmin = std::min(r.qmin, beta[i] - alpha * g);
    r.qmax = std::max(r.qmax, beta[i] + alpha * g);
  }
  return r;
}

/// Values of slice c along axis 0.
inline std::vector<double> channel_slice(const Tensor &t, std::size_t c)
{
  const std::size_t per = t.numel() / t.dim(0);
  return {t.data().begin() + static_cast<std::ptrdiff_t>(c * per),
          t.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * per)};
}

/// Fit a weight-style spec: per-tensor, or per-channel along axis 0.
inline QuantizerSpec fit_spec(const Tensor &v, Scheme scheme, int bits, Granularity g, RangeMethod method)
{
  auto one = [&](std::span<const double> d) {
    switch (method)
    {
      case RangeMethod::MinMax:
        return range_minmax(d);
      case RangeMethod::MSE:
        return range_mse(d, scheme, bits);
      default:
        throw ConfigError("range method '" + std::string(to_string(method)) + "' cannot fit a tensor directly");
    }
  };
  if (g == Granularity::PerTensor)
    return spec_from_range(one(v.data()), scheme, bits);
  std::vector<Range> ranges;
  for (std::size_t c = 0; c < v.dim(0); ++c)
  {
    const auto slice = channel_slice(v, c);
    ranges.push_back(one(slice));
  }
  return spec_from_ranges(ranges, scheme, bits, 0);
}

} // namespace quantkit

#endif // QUANTKIT_RANGE_SETTING_HPP
