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

#ifndef QUANTKIT_TENSOR_HPP
#define QUANTKIT_TENSOR_HPP

#include "quantkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace quantkit
{

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape &shape)
{
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    oss << (i ? "," : "") << shape[i];
  oss << ']';
  return oss.str();
}

/**
 * Dense row-major tensor of doubles.
 *
 * All arithmetic in the library is done in 64-bit floats so that the quantization
 * simulator and the integer executor see the same rounding inputs.
 */
class Tensor
{
public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : _shape(std::move(shape)), _data(shape_numel(_shape), fill)
  {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data) : _shape(std::move(shape)), _data(std::move(data))
  {
    check_shape();
    if (shape_numel(_shape) != _data.size())
      throw DimensionError("tensor data length " + std::to_string(_data.size()) + " does not match shape " +
                           shape_str(_shape));
  }

  /// Construction from untrusted data: rejects NaN / Inf.
  static Tensor from_external(Shape shape, std::vector<double> data)
  {
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        throw ContractError("non-finite value at flat index " + std::to_string(i));
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape &shape() const noexcept { return _shape; }
  std::size_t rank() const noexcept { return _shape.size(); }
  std::size_t dim(std::size_t i) const
  {
    if (i >= _shape.size())
      throw DimensionError("axis " + std::to_string(i) + " out of range for shape " + shape_str(_shape));
    return _shape[i];
  }
  std::size_t numel() const noexcept { return _data.size(); }
  bool empty() const noexcept { return _data.empty(); }

  std::span<const double> data() const noexcept { return _data; }
  std::span<double> data() noexcept { return _data; }
  const std::vector<double> &vec() const noexcept { return _data; }

  double operator[](std::size_t i) const noexcept { return _data[i]; }
  double &operator[](std::size_t i) noexcept { return _data[i]; }

  double item() const
  {
    if (_data.size() != 1)
      throw ContractError("item() on tensor of shape " + shape_str(_shape));
    return _data[0];
  }

  Tensor reshaped(Shape shape) const
  {
    if (shape_numel(shape) != numel())
      throw DimensionError("cannot reshape " + shape_str(_shape) + " to " + shape_str(shape));
    return Tensor(std::move(shape), _data);
  }

  bool operator==(const Tensor &o) const = default;

private:
  void check_shape() const
  {
    for (auto d : _shape)
      if (d == 0)
        throw DimensionError("zero-sized dimension in shape " + shape_str(_shape));
  }

  Shape _shape;
  std::vector<double> _data;
};

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *op)
{
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

/// Number of elements per channel slice for a tensor laid out [N, C, ...].
inline std::size_t inner_size(const Tensor &t)
{
  std::size_t inner = 1;
  for (std::size_t i = 2; i < t.rank(); ++i)
    inner *= t.shape()[i];
  return inner;
}

namespace ops
{

template <typename F> Tensor map(const Tensor &a, F &&f)
{
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out[i] = f(a[i]);
  return out;
}

template <typename F> Tensor zip(const Tensor &a, const Tensor &b, const char *op, F &&f)
{
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor &a, const Tensor &b)
{
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor &a, const Tensor &b)
{
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor &a, const Tensor &b)
{
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor scale(const Tensor &a, double k)
{
  return map(a, [k](double x) { return x * k; });
}

inline double sum(const Tensor &a)
{
  double s = 0.0;
  for (double v : a.data())
    s += v;
  return s;
}

inline double max_abs(std::span<const double> v)
{
  double m = 0.0;
  for (double x : v)
    m = std::max(m, std::abs(x));
  return m;
}

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor &a, const Tensor &b)
{
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
    {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

inline Tensor transpose(const Tensor &a)
{
  if (a.rank() != 2)
    throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[j * m + i] = a[i * n + j];
  return out;
}

/// Fully connected layer: x [N,in], w [out,in], bias [out] (may be empty) -> [N,out].
inline Tensor linear(const Tensor &x, const Tensor &w, const Tensor &bias)
{
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), in = w.dim(1), out_f = w.dim(0);
  Tensor out(Shape{n, out_f});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_f; ++o)
    {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i)
        acc += w[o * in + i] * x[r * in + i];
      out[r * out_f + o] = acc + (bias.empty() ? 0.0 : bias[o]);
    }
  return out;
}

/// Output spatial extent of a convolution / pooling window; throws on non-divisible geometry.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad)
{
  if (stride == 0)
    throw DimensionError("stride must be positive");
  if (in + 2 * pad < kernel)
    throw DimensionError("kernel " + std::to_string(kernel) + " does not fit padded input " +
                         std::to_string(in + 2 * pad));
  if ((in + 2 * pad - kernel) % stride != 0)
    throw DimensionError("non-divisible stride geometry: (" + std::to_string(in) + "+2*" + std::to_string(pad) +
                         "-" + std::to_string(kernel) + ") % " + std::to_string(stride) + " != 0");
  return (in + 2 * pad - kernel) / stride + 1;
}

struct ConvGeometry
{
  std::size_t n, c, h, w;       // input
  std::size_t k, kh, kw;        // kernel
  std::size_t oh, ow;           // output
  std::size_t stride, pad;
  bool depthwise;
  std::size_t cin_per_group() const { return depthwise ? 1 : c; }
};

inline ConvGeometry conv_geometry(const Tensor &x, const Tensor &w, std::size_t stride, std::size_t pad,
                                  bool depthwise)
{
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv2d expects NCHW input and KCHW weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, stride, pad, depthwise};
  if (depthwise)
  {
    if (w.dim(1) != 1 || w.dim(0) != g.c)
      throw DimensionError("depthwise conv2d requires weight [C,1,kh,kw] with C=" + std::to_string(g.c) + ", got " +
                           shape_str(w.shape()));
  }
  else if (w.dim(1) != g.c)
    throw DimensionError("conv2d: weight input channels " + std::to_string(w.dim(1)) + " != " + std::to_string(g.c));
  g.oh = conv_out_extent(g.h, g.kh, stride, pad);
  g.ow = conv_out_extent(g.w, g.kw, stride, pad);
  return g;
}

/**
 * Zero-padded cross-correlation plus bias. Depthwise variant (groups == C) takes
 * weight [C,1,kh,kw]. Accumulation order: input channel, kernel row, kernel column.
 */
inline Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &bias, std::size_t stride, std::size_t pad,
                     bool depthwise = false)
{
  const auto g = conv_geometry(x, w, stride, pad, depthwise);
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != g.k))
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()));
  Tensor out(Shape{g.n, g.k, g.oh, g.ow});
  const std::size_t cin = g.cin_per_group();
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t k = 0; k < g.k; ++k)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
        {
          double acc = 0.0;
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
                acc += w[((k * cin + ci) * g.kh + ky) * g.kw + kx] *
                       x[((b * g.c + c) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
              }
            }
          }
          out[((b * g.k + k) * g.oh + oy) * g.ow + ox] = acc + (bias.empty() ? 0.0 : bias[k]);
        }
  return out;
}

/// Gradients of conv2d w.r.t. input and weight given upstream gradient dy.
inline void conv2d_backward(const Tensor &x, const Tensor &w, const Tensor &dy, std::size_t stride, std::size_t pad,
                            bool depthwise, Tensor *dx, Tensor *dw)
{
  const auto g = conv_geometry(x, w, stride, pad, depthwise);
  const std::size_t cin = g.cin_per_group();
  if (dx)
    *dx = Tensor(x.shape());
  if (dw)
    *dw = Tensor(w.shape());
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t k = 0; k < g.k; ++k)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
        {
          const double gy = dy[((b * g.k + k) * g.oh + oy) * g.ow + ox];
          if (gy == 0.0)
            continue;
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
                const std::size_t xi =
                    ((b * g.c + c) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
                const std::size_t wi = ((k * cin + ci) * g.kh + ky) * g.kw + kx;
                if (dx)
                  (*dx)[xi] += gy * w[wi];
                if (dw)
                  (*dw)[wi] += gy * x[xi];
              }
            }
          }
        }
}

/// Per-channel sum of a [N,C,...] tensor over every axis except 1.
inline std::vector<double> channel_sum(const Tensor &t)
{
  if (t.rank() < 2)
    throw DimensionError("channel_sum expects rank >= 2");
  const std::size_t c = t.dim(1), inner = inner_size(t);
  std::vector<double> s(c, 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i)
    s[(i / inner) % c] += t[i];
  return s;
}

inline std::vector<double> channel_mean(const Tensor &t)
{
  auto s = channel_sum(t);
  const double count = static_cast<double>(t.numel() / t.dim(1));
  for (auto &v : s)
    v /= count;
  return s;
}

inline Tensor relu(const Tensor &x)
{
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

/// ReLU6 with optional per-channel clip points along axis 1 (default 6).
inline Tensor relu6(const Tensor &x, const std::vector<double> &clip)
{
  Tensor out(x.shape());
  const std::size_t c = x.rank() >= 2 ? x.dim(1) : 1;
  if (!clip.empty() && clip.size() != c)
    throw DimensionError("relu6 clip vector length " + std::to_string(clip.size()) + " != channels " +
                         std::to_string(c));
  const std::size_t inner = x.rank() >= 2 ? inner_size(x) : 1;
  for (std::size_t i = 0; i < x.numel(); ++i)
  {
    const double hi = clip.empty() ? 6.0 : clip[(i / inner) % c];
    out[i] = std::min(std::max(x[i], 0.0), hi);
  }
  return out;
}

/// Non-overlapping pooling window (kernel == stride, no padding) over NCHW.
struct PoolGeometry
{
  std::size_t n, c, h, w, k, oh, ow;
};

inline PoolGeometry pool_geometry(const Tensor &x, std::size_t k)
{
  if (x.rank() != 4)
    throw DimensionError("pooling expects NCHW input, got " + shape_str(x.shape()));
  return PoolGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, conv_out_extent(x.dim(2), k, k, 0),
                      conv_out_extent(x.dim(3), k, k, 0)};
}

inline Tensor maxpool2d(const Tensor &x, std::size_t k)
{
  const auto g = pool_geometry(x, k);
  Tensor out(Shape{g.n, g.c, g.oh, g.ow});
  for (std::size_t p = 0; p < g.n * g.c; ++p)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox)
      {
        double m = x[(p * g.h + oy * k) * g.w + ox * k];
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            m = std::max(m, x[(p * g.h + oy * k + ky) * g.w + ox * k + kx]);
        out[(p * g.oh + oy) * g.ow + ox] = m;
      }
  return out;
}

inline Tensor avgpool2d(const Tensor &x, std::size_t k)
{
  const auto g = pool_geometry(x, k);
  Tensor out(Shape{g.n, g.c, g.oh, g.ow});
  const double count = static_cast<double>(k * k);
  for (std::size_t p = 0; p < g.n * g.c; ++p)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox)
      {
        double s = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            s += x[(p * g.h + oy * k + ky) * g.w + ox * k + kx];
        out[(p * g.oh + oy) * g.ow + ox] = s / count;
      }
  return out;
}

inline Tensor flatten(const Tensor &x)
{
  if (x.rank() < 2)
    throw DimensionError("flatten expects rank >= 2");
  return x.reshaped(Shape{x.dim(0), x.numel() / x.dim(0)});
}

/// Concatenate along axis 1; all other dims must agree.
inline Tensor concat(const std::vector<const Tensor *> &parts)
{
  if (parts.empty())
    throw ContractError("concat of zero tensors");
  const Tensor &first = *parts.front();
  if (first.rank() < 2)
    throw DimensionError("concat expects rank >= 2");
  Shape shape = first.shape();
  std::size_t channels = 0;
  for (const Tensor *p : parts)
  {
    if (p->rank() != first.rank() || p->dim(0) != first.dim(0) || inner_size(*p) != inner_size(first))
      throw DimensionError("concat: incompatible part " + shape_str(p->shape()) + " vs " + shape_str(first.shape()));
    for (std::size_t d = 2; d < first.rank(); ++d)
      if (p->dim(d) != first.dim(d))
        throw DimensionError("concat: incompatible part " + shape_str(p->shape()));
    channels += p->dim(1);
  }
  shape[1] = channels;
  Tensor out(shape);
  const std::size_t n = first.dim(0), inner = inner_size(first);
  std::size_t offset = 0;
  for (const Tensor *p : parts)
  {
    const std::size_t pc = p->dim(1);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < pc; ++c)
        for (std::size_t i = 0; i < inner; ++i)
          out[(b * channels + offset + c) * inner + i] = (*p)[(b * pc + c) * inner + i];
    offset += pc;
  }
  return out;
}

/// Rows [begin, end) along axis 0.
inline Tensor slice_rows(const Tensor &x, std::size_t begin, std::size_t end)
{
  if (begin >= end || end > x.dim(0))
    throw DimensionError("slice_rows out of range");
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> d(x.data().begin() + static_cast<long>(begin * row), x.data().begin() + static_cast<long>(end * row));
  return Tensor(shape, std::move(d));
}

/// Gather rows by index along axis 0.
inline Tensor gather_rows(const Tensor &x, std::span<const std::size_t> idx)
{
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = idx.size();
  std::vector<double> d;
  d.reserve(idx.size() * row);
  for (auto i : idx)
  {
    if (i >= x.dim(0))
      throw DimensionError("gather_rows index out of range");
    d.insert(d.end(), x.data().begin() + static_cast<long>(i * row), x.data().begin() + static_cast<long>((i + 1) * row));
  }
  return Tensor(shape, std::move(d));
}

/// Stack tensors with identical trailing shape along axis 0.
inline Tensor concat_rows(const std::vector<Tensor> &parts)
{
  if (parts.empty())
    throw ContractError("concat_rows of zero tensors");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  std::vector<double> d;
  for (const auto &p : parts)
  {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1))
      throw DimensionError("concat_rows: incompatible shapes");
    rows += p.dim(0);
    d.insert(d.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor(shape, std::move(d));
}

} // namespace ops

} // namespace quantkit

#endif // QUANTKIT_TENSOR_HPP
