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

#ifndef QUANTKIT_AUTOGRAD_HPP
#define QUANTKIT_AUTOGRAD_HPP

#include "quantkit/error.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/tensor.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

// Define-by-run reverse-mode differentiation. Each op allocates a Node holding its
// value and a closure that pushes the node's gradient into its parents. The tape is
// the DAG reachable from the loss; a tape must stay on one thread.

namespace quantkit::ag
{

struct Node
{
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char *op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  void accumulate(const Tensor &g)
  {
    if (grad.empty())
      grad = g;
    else
    {
      require_same_shape(grad, g, "gradient accumulation");
      for (std::size_t i = 0; i < g.numel(); ++i)
        grad[i] += g[i];
    }
  }
};

class Var
{
public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : _node(std::make_shared<Node>())
  {
    _node->value = std::move(value);
    _node->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : _node(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return static_cast<bool>(_node); }
  const Tensor &value() const { return _node->value; }
  Tensor &mutable_value() { return _node->value; }
  bool requires_grad() const noexcept { return _node && _node->requires_grad; }
  const Shape &shape() const { return _node->value.shape(); }

  /// Gradient after backward(); zeros when nothing flowed into this node.
  Tensor grad() const { return _node->grad.empty() ? Tensor(_node->value.shape()) : _node->grad; }
  bool has_grad() const noexcept { return _node && !_node->grad.empty(); }
  void zero_grad() { _node->grad = Tensor(); }

  const std::shared_ptr<Node> &node() const noexcept { return _node; }

private:
  std::shared_ptr<Node> _node;
};

/// Record an op; parents that do not require gradients are not kept alive.
inline Var make_op(Tensor value, std::initializer_list<Var> parents, const char *op, std::function<void(Node &)> bw)
{
  bool needs = false;
  for (const auto &p : parents)
    needs = needs || p.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (needs)
  {
    node->requires_grad = true;
    for (const auto &p : parents)
      node->parents.push_back(p.node());
    node->backward_fn = std::move(bw);
  }
  return Var(std::move(node));
}

inline Var make_op(Tensor value, const std::vector<Var> &parents, const char *op, std::function<void(Node &)> bw)
{
  bool needs = false;
  for (const auto &p : parents)
    needs = needs || p.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (needs)
  {
    node->requires_grad = true;
    for (const auto &p : parents)
      node->parents.push_back(p.node());
    node->backward_fn = std::move(bw);
  }
  return Var(std::move(node));
}

/// Accumulate d(loss)/d(leaf) into every reachable node requiring gradients.
inline void backward(const Var &loss)
{
  if (loss.value().numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    return;

  // Iterative post-order DFS gives a topological order; each node is visited once.
  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<std::pair<Node *, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty())
  {
    auto &[n, next] = stack.back();
    if (next < n->parents.size())
    {
      Node *p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second)
        stack.emplace_back(p, 0);
    }
    else
    {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it)
  {
    Node *n = *it;
    if (n->backward_fn && !n->grad.empty())
      n->backward_fn(*n);
  }
}

// ---- elementwise --------------------------------------------------------------

inline Var add(const Var &a, const Var &b)
{
  auto pa = a.node(), pb = b.node();
  return make_op(ops::add(a.value(), b.value()), {a, b}, "add", [pa, pb](Node &self) {
    if (pa->requires_grad)
      pa->accumulate(self.grad);
    if (pb->requires_grad)
      pb->accumulate(self.grad);
  });
}

inline Var sub(const Var &a, const Var &b)
{
  auto pa = a.node(), pb = b.node();
  return make_op(ops::sub(a.value(), b.value()), {a, b}, "sub", [pa, pb](Node &self) {
    if (pa->requires_grad)
      pa->accumulate(self.grad);
    if (pb->requires_grad)
      pb->accumulate(ops::scale(self.grad, -1.0));
  });
}

inline Var mul(const Var &a, const Var &b)
{
  auto pa = a.node(), pb = b.node();
  return make_op(ops::mul(a.value(), b.value()), {a, b}, "mul", [pa, pb](Node &self) {
    if (pa->requires_grad)
      pa->accumulate(ops::mul(self.grad, pb->value));
    if (pb->requires_grad)
      pb->accumulate(ops::mul(self.grad, pa->value));
  });
}

inline Var scale(const Var &a, double k)
{
  auto pa = a.node();
  return make_op(ops::scale(a.value(), k), {a}, "scale", [pa, k](Node &self) { pa->accumulate(ops::scale(self.grad, k)); });
}

inline Var square(const Var &a)
{
  auto pa = a.node();
  return make_op(ops::mul(a.value(), a.value()), {a}, "square", [pa](Node &self) {
    pa->accumulate(ops::zip(self.grad, pa->value, "square", [](double g, double x) { return 2.0 * g * x; }));
  });
}

inline Var exp(const Var &a)
{
  auto pa = a.node();
  Tensor out = ops::map(a.value(), [](double x) { return std::exp(x); });
  return make_op(out, {a}, "exp", [pa, out](Node &self) { pa->accumulate(ops::mul(self.grad, out)); });
}

inline Var sigmoid(const Var &a)
{
  auto pa = a.node();
  Tensor out = ops::map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_op(out, {a}, "sigmoid", [pa, out](Node &self) {
    pa->accumulate(ops::zip(self.grad, out, "sigmoid", [](double g, double s) { return g * s * (1.0 - s); }));
  });
}

inline Var sum(const Var &a)
{
  auto pa = a.node();
  return make_op(Tensor::scalar(ops::sum(a.value())), {a}, "sum",
                 [pa](Node &self) { pa->accumulate(Tensor(pa->value.shape(), self.grad[0])); });
}

inline Var mean(const Var &a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

inline Var relu(const Var &a)
{
  auto pa = a.node();
  return make_op(ops::relu(a.value()), {a}, "relu", [pa](Node &self) {
    pa->accumulate(ops::zip(self.grad, pa->value, "relu", [](double g, double x) { return x > 0.0 ? g : 0.0; }));
  });
}

inline Var relu6(const Var &a, std::vector<double> clip)
{
  auto pa = a.node();
  Tensor out = ops::relu6(a.value(), clip);
  return make_op(out, {a}, "relu6", [pa, clip = std::move(clip)](Node &self) {
    const Tensor &x = pa->value;
    const std::size_t c = x.rank() >= 2 ? x.dim(1) : 1;
    const std::size_t inner = x.rank() >= 2 ? inner_size(x) : 1;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
    {
      const double hi = clip.empty() ? 6.0 : clip[(i / inner) % c];
      g[i] = (x[i] > 0.0 && x[i] < hi) ? self.grad[i] : 0.0;
    }
    pa->accumulate(g);
  });
}

// ---- linear algebra -----------------------------------------------------------

inline Var matmul(const Var &a, const Var &b)
{
  auto pa = a.node(), pb = b.node();
  return make_op(ops::matmul(a.value(), b.value()), {a, b}, "matmul", [pa, pb](Node &self) {
    if (pa->requires_grad)
      pa->accumulate(ops::matmul(self.grad, ops::transpose(pb->value)));
    if (pb->requires_grad)
      pb->accumulate(ops::matmul(ops::transpose(pa->value), self.grad));
  });
}

/// x [N,in], w [out,in], optional bias [out].
inline Var linear(const Var &x, const Var &w, const Var &bias)
{
  auto px = x.node(), pw = w.node();
  auto pbias = bias.defined() ? bias.node() : nullptr;
  Tensor out = ops::linear(x.value(), w.value(), bias.defined() ? bias.value() : Tensor());
  std::vector<Var> parents{x, w};
  if (bias.defined())
    parents.push_back(bias);
  return make_op(std::move(out), parents, "linear", [px, pw, pbias](Node &self) {
    const Tensor &g = self.grad;
    const std::size_t n = px->value.dim(0), in = pw->value.dim(1), of = pw->value.dim(0);
    if (px->requires_grad)
    {
      Tensor dx(px->value.shape());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < of; ++o)
        {
          const double go = g[r * of + o];
          for (std::size_t i = 0; i < in; ++i)
            dx[r * in + i] += go * pw->value[o * in + i];
        }
      px->accumulate(dx);
    }
    if (pw->requires_grad)
    {
      Tensor dw(pw->value.shape());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < of; ++o)
        {
          const double go = g[r * of + o];
          for (std::size_t i = 0; i < in; ++i)
            dw[o * in + i] += go * px->value[r * in + i];
        }
      pw->accumulate(dw);
    }
    if (pbias && pbias->requires_grad)
    {
      Tensor db(pbias->value.shape());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < of; ++o)
          db[o] += g[r * of + o];
      pbias->accumulate(db);
    }
  });
}

inline Var conv2d(const Var &x, const Var &w, const Var &bias, std::size_t stride, std::size_t pad, bool depthwise)
{
  auto px = x.node(), pw = w.node();
  auto pbias = bias.defined() ? bias.node() : nullptr;
  Tensor out = ops::conv2d(x.value(), w.value(), bias.defined() ? bias.value() : Tensor(), stride, pad, depthwise);
  std::vector<Var> parents{x, w};
  if (bias.defined())
    parents.push_back(bias);
  return make_op(std::move(out), parents, "conv2d", [px, pw, pbias, stride, pad, depthwise](Node &self) {
    Tensor dx, dw;
    ops::conv2d_backward(px->value, pw->value, self.grad, stride, pad, depthwise, px->requires_grad ? &dx : nullptr,
                         pw->requires_grad ? &dw : nullptr);
    if (px->requires_grad)
      px->accumulate(dx);
    if (pw->requires_grad)
      pw->accumulate(dw);
    if (pbias && pbias->requires_grad)
    {
      auto s = ops::channel_sum(self.grad);
      pbias->accumulate(Tensor(pbias->value.shape(), std::move(s)));
    }
  });
}

/// Inference-mode batch norm over axis 1 with fixed running statistics; gamma/beta may be trainable.
inline Var batchnorm(const Var &x, const Var &gamma, const Var &beta, const Tensor &mean, const Tensor &var, double eps)
{
  const Tensor &xv = x.value();
  const std::size_t c = xv.dim(1), inner = inner_size(xv);
  if (gamma.value().numel() != c || beta.value().numel() != c || mean.numel() != c || var.numel() != c)
    throw DimensionError("batchnorm parameters do not match channel count " + std::to_string(c));
  std::vector<double> inv(c);
  for (std::size_t k = 0; k < c; ++k)
    inv[k] = 1.0 / std::sqrt(var[k] + eps);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i)
  {
    const std::size_t k = (i / inner) % c;
    out[i] = gamma.value()[k] * ((xv[i] - mean[k]) * inv[k]) + beta.value()[k];
  }
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta}, "batchnorm", [px, pg, pb, mean, inv, c, inner](Node &self) {
    const Tensor &xv = px->value;
    Tensor dx(xv.shape()), dg(pg->value.shape()), db(pb->value.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i)
    {
      const std::size_t k = (i / inner) % c;
      const double g = self.grad[i];
      dx[i] = g * pg->value[k] * inv[k];
      dg[k] += g * (xv[i] - mean[k]) * inv[k];
      db[k] += g;
    }
    if (px->requires_grad)
      px->accumulate(dx);
    if (pg->requires_grad)
      pg->accumulate(dg);
    if (pb->requires_grad)
      pb->accumulate(db);
  });
}

// ---- shape ops ----------------------------------------------------------------

inline Var reshape(const Var &a, Shape shape)
{
  auto pa = a.node();
  return make_op(a.value().reshaped(std::move(shape)), {a}, "reshape",
                 [pa](Node &self) { pa->accumulate(self.grad.reshaped(pa->value.shape())); });
}

inline Var flatten(const Var &a)
{
  const auto &v = a.value();
  return reshape(a, Shape{v.dim(0), v.numel() / v.dim(0)});
}

inline Var maxpool2d(const Var &a, std::size_t k)
{
  auto pa = a.node();
  return make_op(ops::maxpool2d(a.value(), k), {a}, "maxpool", [pa, k](Node &self) {
    const Tensor &x = pa->value;
    const auto g = ops::pool_geometry(x, k);
    Tensor dx(x.shape());
    for (std::size_t p = 0; p < g.n * g.c; ++p)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
        {
          std::size_t best = (p * g.h + oy * k) * g.w + ox * k;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
            {
              const std::size_t idx = (p * g.h + oy * k + ky) * g.w + ox * k + kx;
              if (x[idx] > x[best])
                best = idx;
            }
          dx[best] += self.grad[(p * g.oh + oy) * g.ow + ox];
        }
    pa->accumulate(dx);
  });
}

inline Var avgpool2d(const Var &a, std::size_t k)
{
  auto pa = a.node();
  return make_op(ops::avgpool2d(a.value(), k), {a}, "avgpool", [pa, k](Node &self) {
    const Tensor &x = pa->value;
    const auto g = ops::pool_geometry(x, k);
    Tensor dx(x.shape());
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t p = 0; p < g.n * g.c; ++p)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              dx[(p * g.h + oy * k + ky) * g.w + ox * k + kx] += self.grad[(p * g.oh + oy) * g.ow + ox] * inv;
    pa->accumulate(dx);
  });
}

inline Var concat(const std::vector<Var> &parts)
{
  std::vector<const Tensor *> vals;
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto &p : parts)
  {
    vals.push_back(&p.value());
    nodes.push_back(p.node());
  }
  return make_op(ops::concat(vals), parts, "concat", [nodes](Node &self) {
    const Tensor &g = self.grad;
    const std::size_t n = g.dim(0), channels = g.dim(1), inner = inner_size(g);
    std::size_t offset = 0;
    for (const auto &p : nodes)
    {
      const std::size_t pc = p->value.dim(1);
      if (p->requires_grad)
      {
        Tensor d(p->value.shape());
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = 0; c < pc; ++c)
            for (std::size_t i = 0; i < inner; ++i)
              d[(b * pc + c) * inner + i] = g[(b * channels + offset + c) * inner + i];
        p->accumulate(d);
      }
      offset += pc;
    }
  });
}

// ---- losses -------------------------------------------------------------------

/// Mean softmax cross-entropy of logits [N,C] against integer labels.
inline Var softmax_cross_entropy(const Var &logits, const std::vector<int> &labels)
{
  const Tensor &z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size())
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor prob(z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r)
  {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c)
      throw ContractError("label " + std::to_string(labels[r]) + " out of range");
    double m = z[r * c];
    for (std::size_t j = 1; j < c; ++j)
      m = std::max(m, z[r * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      s += std::exp(z[r * c + j] - m);
    for (std::size_t j = 0; j < c; ++j)
      prob[r * c + j] = std::exp(z[r * c + j] - m) / s;
    loss += -(z[r * c + static_cast<std::size_t>(labels[r])] - m - std::log(s));
  }
  loss /= static_cast<double>(n);
  auto pz = logits.node();
  return make_op(Tensor::scalar(loss), {logits}, "xent", [pz, prob, labels, n, c](Node &self) {
    Tensor d = prob;
    for (std::size_t r = 0; r < n; ++r)
      d[r * c + static_cast<std::size_t>(labels[r])] -= 1.0;
    pz->accumulate(ops::scale(d, self.grad[0] / static_cast<double>(n)));
  });
}

inline Var mse_loss(const Var &a, const Var &b) { return mean(square(sub(a, b))); }

// ---- quantizer block ----------------------------------------------------------

/**
 * Fake quantization with straight-through gradients.
 *
 * `scale` and `zero_point`, when defined, hold one learnable value per spec group and
 * override the spec's parameters; the real zero-point is rounded in the forward pass.
 */
inline Var fake_quant(const Var &x, const QuantizerSpec &spec, const Var &scale = Var(), const Var &zero_point = Var())
{
  spec.check_tensor(x.value());
  const std::size_t groups = spec.groups();
  std::vector<double> s(spec.scale), zr(groups);
  std::vector<std::int64_t> zi(spec.zero_point);
  if (scale.defined())
  {
    if (scale.value().numel() != groups)
      throw DimensionError("learnable scale has wrong group count");
    for (std::size_t g = 0; g < groups; ++g)
      s[g] = scale.value()[g];
  }
  if (zero_point.defined())
  {
    if (spec.scheme != Scheme::AsymmetricUnsigned)
      throw ContractError("learnable zero-point on a symmetric quantizer");
    for (std::size_t g = 0; g < groups; ++g)
    {
      const double r = round_half_even(zero_point.value()[g]);
      zi[g] = static_cast<std::int64_t>(std::clamp(r, 0.0, static_cast<double>(spec.code_max())));
    }
  }
  for (std::size_t g = 0; g < groups; ++g)
  {
    if (!(s[g] > 0.0) || !std::isfinite(s[g]))
      throw NumericalError("quantizer scale became non-positive or non-finite");
    zr[g] = static_cast<double>(zi[g]);
  }
  const Tensor &xv = x.value();
  const auto lo = spec.code_min(), hi = spec.code_max();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i)
  {
    const auto g = spec.group_of(xv.shape(), i);
    out[i] = detail::dequantize_value(detail::quantize_value(xv[i], s[g], zi[g], lo, hi), s[g], zi[g]);
  }

  std::vector<Var> parents{x};
  if (scale.defined())
    parents.push_back(scale);
  if (zero_point.defined())
    parents.push_back(zero_point);
  auto px = x.node();
  auto ps = scale.defined() ? scale.node() : nullptr;
  auto pz = zero_point.defined() ? zero_point.node() : nullptr;
  return make_op(std::move(out), parents, "fake_quant", [px, ps, pz, spec, s, zi, lo, hi](Node &self) {
    const Tensor &xv = px->value;
    Tensor dx(xv.shape());
    std::vector<double> ds(s.size(), 0.0), dz(s.size(), 0.0);
    for (std::size_t i = 0; i < xv.numel(); ++i)
    {
      const auto g = spec.group_of(xv.shape(), i);
      const IntGridLimits lim{lo - zi[g], hi - zi[g]};
      const double qmin = s[g] * static_cast<double>(lim.n), qmax = s[g] * static_cast<double>(lim.p);
      const bool inside = xv[i] >= qmin && xv[i] <= qmax;
      const double up = self.grad[i];
      if (inside)
        dx[i] = up;
      else
        dz[g] += up * -s[g];
      ds[g] += up * ste_scale_term(xv[i], s[g], lim);
    }
    if (px->requires_grad)
      px->accumulate(dx);
    if (ps && ps->requires_grad)
      ps->accumulate(Tensor(ps->value.shape(), ds));
    if (pz && pz->requires_grad)
      pz->accumulate(Tensor(pz->value.shape(), dz));
  });
}

// ---- optimizers ---------------------------------------------------------------

struct AdamState
{
  std::vector<Tensor> m, v;
  long step = 0;
};

/// Bias-corrected adaptive-moment update applied in place.
inline void adam_step(std::span<Tensor *const> params, std::span<const Tensor> grads, AdamState &state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, std::span<const double> lr_scale = {})
{
  if (params.size() != grads.size())
    throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty())
    for (auto *p : params)
    {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  if (state.m.size() != params.size())
    throw DimensionError("adam_step: optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k)
  {
    Tensor &p = *params[k];
    const Tensor &g = grads[k];
    require_same_shape(p, g, "adam_step");
    const double plr = lr * (lr_scale.empty() ? 1.0 : lr_scale[k]);
    for (std::size_t i = 0; i < p.numel(); ++i)
    {
      state.m[k][i] = beta1 * state.m[k][i] + (1.0 - beta1) * g[i];
      state.v[k][i] = beta2 * state.v[k][i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = state.m[k][i] / c1, vhat = state.v[k][i] / c2;
      p[i] -= plr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline void sgd_step(std::span<Tensor *const> params, std::span<const Tensor> grads, double lr,
                     std::span<const double> lr_scale = {})
{
  for (std::size_t k = 0; k < params.size(); ++k)
  {
    const double plr = lr * (lr_scale.empty() ? 1.0 : lr_scale[k]);
    for (std::size_t i = 0; i < params[k]->numel(); ++i)
      (*params[k])[i] -= plr * grads[k][i];
  }
}

} // namespace quantkit::ag

#endif // QUANTKIT_AUTOGRAD_HPP
