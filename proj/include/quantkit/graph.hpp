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

#ifndef QUANTKIT_GRAPH_HPP
#define QUANTKIT_GRAPH_HPP

#include "quantkit/error.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace quantkit
{

enum class LayerKind
{
  Linear,
  Conv2d,
  DepthwiseConv2d,
  BatchNorm,
  ReLU,
  ReLU6,
  Add,
  Concat,
  AvgPool,
  MaxPool,
  Flatten,
};

inline std::string_view to_string(LayerKind k)
{
  switch (k)
  {
    case LayerKind::Linear:
      return "linear";
    case LayerKind::Conv2d:
      return "conv2d";
    case LayerKind::DepthwiseConv2d:
      return "depthwise_conv2d";
    case LayerKind::BatchNorm:
      return "batchnorm";
    case LayerKind::ReLU:
      return "relu";
    case LayerKind::ReLU6:
      return "relu6";
    case LayerKind::Add:
      return "add";
    case LayerKind::Concat:
      return "concat";
    case LayerKind::AvgPool:
      return "avgpool";
    case LayerKind::MaxPool:
      return "maxpool";
    case LayerKind::Flatten:
      return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s)
{
  for (int i = 0; i <= static_cast<int>(LayerKind::Flatten); ++i)
    if (to_string(static_cast<LayerKind>(i)) == s)
      return static_cast<LayerKind>(i);
  throw ParseError("unknown layer kind '" + std::string(s) + "'");
}

inline bool is_mac(LayerKind k)
{
  return k == LayerKind::Linear || k == LayerKind::Conv2d || k == LayerKind::DepthwiseConv2d;
}

inline bool is_activation(LayerKind k) { return k == LayerKind::ReLU || k == LayerKind::ReLU6; }

/// Batch-norm shift and scale kept on a layer after folding.
struct BnMeta
{
  std::vector<double> gamma;
  std::vector<double> beta;

  bool operator==(const BnMeta &) const = default;
};

/**
 * One node of the graph. Value ids: 0 is the graph input, k+1 is the output of
 * layer k; `inputs` refer to value ids produced earlier.
 */
struct Layer
{
  LayerKind kind = LayerKind::Linear;
  std::string name;
  std::vector<std::size_t> inputs;

  Tensor weight; // Linear [out,in], Conv [K,C,kh,kw], depthwise [C,1,kh,kw]
  Tensor bias;   // [out]

  Tensor gamma, beta, mean, var;
  double eps = 1e-5;

  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t kernel = 2; // pooling window (== stride)

  std::vector<double> clip; // ReLU6 per-channel clip; empty means 6

  std::optional<BnMeta> bn_meta;
  bool tied = false; // Add: one shared grid for inputs and output

  std::size_t out_channels() const { return weight.dim(0); }
  bool operator==(const Layer &) const = default;
};

enum class SlotKind
{
  Weight,
  Activation,
};

struct QuantSlot
{
  std::string id;
  SlotKind kind = SlotKind::Activation;
  Scheme scheme = Scheme::AsymmetricUnsigned;
  int bitwidth = 8;
  Granularity granularity = Granularity::PerTensor;
  std::optional<QuantizerSpec> spec;
  bool enabled = true; // false: bypassed (identity)

  bool operator==(const QuantSlot &) const = default;
};

struct Graph
{
  std::string task = "classifier"; // or "regression"
  Shape input_shape;               // without the batch dimension
  std::vector<double> input_mean;  // per input channel (axis 1), optional
  std::vector<double> input_std;
  std::vector<Layer> layers;
  std::vector<QuantSlot> slots;

  std::size_t num_values() const noexcept { return layers.size() + 1; }
  std::size_t output_value() const noexcept { return layers.size(); }
  bool quantized() const noexcept { return !slots.empty(); }

  int slot_index(const std::string &id) const
  {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].id == id)
        return static_cast<int>(i);
    return -1;
  }
  const QuantSlot &slot(const std::string &id) const
  {
    const int i = slot_index(id);
    if (i < 0)
      throw ContractError("no quantizer slot '" + id + "'");
    return slots[static_cast<std::size_t>(i)];
  }
  QuantSlot &slot(const std::string &id) { return const_cast<QuantSlot &>(std::as_const(*this).slot(id)); }

  int layer_index(const std::string &name) const
  {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name)
        return static_cast<int>(i);
    return -1;
  }

  /// Name of the value: "input" or the producing layer's name.
  std::string value_name(std::size_t v) const { return v == 0 ? "input" : layers.at(v - 1).name; }

  bool operator==(const Graph &) const = default;
};

/// Consumers (layer indices) of every value.
inline std::vector<std::vector<std::size_t>> consumers(const Graph &g)
{
  std::vector<std::vector<std::size_t>> c(g.num_values());
  for (std::size_t k = 0; k < g.layers.size(); ++k)
    for (auto v : g.layers[k].inputs)
      c.at(v).push_back(k);
  return c;
}

/// Output shapes of every value for the given batch size; validates parameters.
inline std::vector<Shape> infer_shapes(const Graph &g, std::size_t batch = 1)
{
  std::vector<Shape> s(g.num_values());
  s[0] = g.input_shape;
  s[0].insert(s[0].begin(), batch);
  auto fail = [&](const Layer &l, const std::string &msg) -> DimensionError {
    return DimensionError("layer '" + l.name + "' (" + std::string(to_string(l.kind)) + "): " + msg);
  };
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    for (auto v : l.inputs)
      if (v > k)
        throw ContractError("layer '" + l.name + "' consumes value " + std::to_string(v) + " that is not yet produced");
    const bool multi = l.kind == LayerKind::Add || l.kind == LayerKind::Concat;
    if (multi ? l.inputs.size() < 2 : l.inputs.size() != 1)
      throw ContractError("layer '" + l.name + "' has " + std::to_string(l.inputs.size()) + " inputs");
    const Shape &in = s[l.inputs[0]];
    Shape out = in;
    switch (l.kind)
    {
      case LayerKind::Linear:
        if (in.size() != 2 || l.weight.rank() != 2 || l.weight.dim(1) != in[1])
          throw fail(l, "weight " + shape_str(l.weight.shape()) + " incompatible with input " + shape_str(in));
        if (l.bias.numel() != l.weight.dim(0))
          throw fail(l, "bias length " + std::to_string(l.bias.numel()));
        out = {in[0], l.weight.dim(0)};
        break;
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
      {
        if (in.size() != 4 || l.weight.rank() != 4)
          throw fail(l, "expects NCHW input and 4-d weight");
        const bool dw = l.kind == LayerKind::DepthwiseConv2d;
        if (dw ? (l.weight.dim(0) != in[1] || l.weight.dim(1) != 1) : l.weight.dim(1) != in[1])
          throw fail(l, "weight " + shape_str(l.weight.shape()) + " incompatible with input " + shape_str(in));
        if (l.bias.numel() != l.weight.dim(0))
          throw fail(l, "bias length " + std::to_string(l.bias.numel()));
        try
        {
          out = {in[0], l.weight.dim(0), ops::conv_out_extent(in[2], l.weight.dim(2), l.stride, l.padding),
                 ops::conv_out_extent(in[3], l.weight.dim(3), l.stride, l.padding)};
        }
        catch (const DimensionError &e)
        {
          throw fail(l, e.what());
        }
        break;
      }
      case LayerKind::BatchNorm:
      {
        if (in.size() < 2)
          throw fail(l, "expects rank >= 2 input");
        for (const Tensor *t : {&l.gamma, &l.beta, &l.mean, &l.var})
          if (t->numel() != in[1])
            throw fail(l, "parameter length does not match " + std::to_string(in[1]) + " channels");
        for (double v : l.var.vec())
          if (v < 0.0)
            throw fail(l, "negative running variance");
        if (!(l.eps > 0.0))
          throw fail(l, "eps must be positive");
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::ReLU6:
        if (!l.clip.empty() && (in.size() < 2 || l.clip.size() != in[1]))
          throw fail(l, "clip vector length " + std::to_string(l.clip.size()));
        break;
      case LayerKind::Add:
        for (auto v : l.inputs)
          if (s[v] != in)
            throw fail(l, "operand shapes " + shape_str(s[v]) + " vs " + shape_str(in));
        break;
      case LayerKind::Concat:
      {
        if (in.size() < 2)
          throw fail(l, "expects rank >= 2 operands");
        out[1] = 0;
        for (auto v : l.inputs)
        {
          const Shape &o = s[v];
          if (o.size() != in.size() || o[0] != in[0] || !std::equal(o.begin() + 2, o.end(), in.begin() + 2))
            throw fail(l, "operand shapes " + shape_str(o) + " vs " + shape_str(in));
          out[1] += o[1];
        }
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::MaxPool:
        if (in.size() != 4)
          throw fail(l, "expects NCHW input");
        try
        {
          out = {in[0], in[1], ops::conv_out_extent(in[2], l.kernel, l.kernel, 0),
                 ops::conv_out_extent(in[3], l.kernel, l.kernel, 0)};
        }
        catch (const DimensionError &e)
        {
          throw fail(l, e.what());
        }
        break;
      case LayerKind::Flatten:
        if (in.size() < 2)
          throw fail(l, "expects rank >= 2 input");
        out = {in[0], shape_numel(in) / in[0]};
        break;
    }
    s[k + 1] = out;
  }
  return s;
}

/// Structural validation: topology, layer arity, parameter shapes, unique names.
inline void validate(const Graph &g)
{
  if (g.input_shape.empty())
    throw ContractError("graph has no input shape");
  for (std::size_t i = 0; i < g.layers.size(); ++i)
  {
    if (g.layers[i].name.empty() || g.layers[i].name == "input")
      throw ContractError("layer " + std::to_string(i) + " has an invalid name");
    for (std::size_t j = 0; j < i; ++j)
      if (g.layers[j].name == g.layers[i].name)
        throw ContractError("duplicate layer name '" + g.layers[i].name + "'");
  }
  infer_shapes(g, 1);
}

// ---- quantizer placement ------------------------------------------------------

/// Quantizer configuration per class, plus per-quantizer bit-width exceptions.
struct QuantConfig
{
  Scheme weight_scheme = Scheme::SymmetricSigned;
  int weight_bits = 8;
  Granularity weight_granularity = Granularity::PerTensor;
  Scheme act_scheme = Scheme::AsymmetricUnsigned;
  int act_bits = 8;
  bool tied_add = false;
  std::map<std::string, int> bit_overrides;
};

/**
 * Where quantizers act. act_slot[v]: slot applied to value v (-1: none);
 * grid_slot[v]: slot whose grid v lies on after quantization (-1: off-grid pre-activation).
 */
struct Placement
{
  std::vector<int> act_slot;
  std::vector<int> grid_slot;
  std::vector<int> weight_slot; // per layer
  std::vector<std::vector<std::size_t>> sites; // per slot: observed values (activation slots)
};

namespace detail
{

/// Whether the output of a layer is consumed only by a fused BN/ReLU/ReLU6.
inline bool output_deferred(const Graph &g, const std::vector<std::vector<std::size_t>> &cons, std::size_t k)
{
  const Layer &l = g.layers[k];
  const bool can = is_mac(l.kind) || l.kind == LayerKind::BatchNorm || (l.kind == LayerKind::Add && !l.tied);
  if (!can || k + 1 == g.output_value())
    return false;
  const auto &c = cons[k + 1];
  if (c.size() != 1)
    return false;
  const LayerKind next = g.layers[c[0]].kind;
  return next == LayerKind::BatchNorm || is_activation(next);
}

inline std::size_t find_root(std::vector<std::size_t> &parent, std::size_t v)
{
  while (parent[v] != v)
  {
    parent[v] = parent[parent[v]];
    v = parent[v];
  }
  return v;
}

} // namespace detail

/// Slot ids required by the graph's placement policy, in deterministic order.
inline std::vector<std::pair<std::string, SlotKind>> required_slots(const Graph &g, Placement *out = nullptr)
{
  const auto cons = consumers(g);
  const std::size_t nv = g.num_values();
  // owner[v]: value that owns the quantizer governing v's grid, or npos if off-grid.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(nv, npos);
  std::vector<bool> applies(nv, false); // a quantizer is applied on this value
  owner[0] = 0;
  applies[0] = true;
  std::vector<std::size_t> parent(nv);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    const std::size_t v = k + 1;
    switch (l.kind)
    {
      case LayerKind::MaxPool:
      case LayerKind::Flatten:
        owner[v] = owner[l.inputs[0]];
        break;
      case LayerKind::AvgPool:
        owner[v] = owner[l.inputs[0]];
        applies[v] = owner[v] != npos;
        break;
      default:
        if (!detail::output_deferred(g, cons, k))
        {
          owner[v] = v;
          applies[v] = true;
        }
        break;
    }
    if (l.kind == LayerKind::Add && l.tied)
      for (auto in : l.inputs)
      {
        if (owner[in] == npos)
          throw ContractError("tied-grid add '" + l.name + "' has an off-grid operand");
        const auto a = detail::find_root(parent, owner[in]), b = detail::find_root(parent, v);
        // The later value becomes the representative so the Add names the merged slot.
        if (a != b)
          parent[std::min(a, b)] = std::max(a, b);
      }
  }
  // Slots in order of first appearance: the input, then per layer its weight and output.
  std::vector<std::pair<std::string, SlotKind>> ids;
  std::map<std::size_t, int> slot_of_root;
  std::vector<int> weight_slot(g.layers.size(), -1);
  auto add_activation = [&](std::size_t v) {
    const auto r = detail::find_root(parent, v);
    if (slot_of_root.count(r))
      return;
    slot_of_root[r] = static_cast<int>(ids.size());
    ids.emplace_back(r == 0 ? std::string("input") : g.layers[r - 1].name + ".out", SlotKind::Activation);
  };
  add_activation(0);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    if (is_mac(g.layers[k].kind))
    {
      weight_slot[k] = static_cast<int>(ids.size());
      ids.emplace_back(g.layers[k].name + ".weight", SlotKind::Weight);
    }
    if (owner[k + 1] == k + 1)
      add_activation(k + 1);
  }
  auto act_slot_of_owner = [&](std::size_t o) { return slot_of_root.at(detail::find_root(parent, o)); };
  if (out)
  {
    out->act_slot.assign(nv, -1);
    out->grid_slot.assign(nv, -1);
    out->weight_slot = weight_slot;
    out->sites.assign(ids.size(), {});
    for (std::size_t v = 0; v < nv; ++v)
    {
      if (owner[v] == npos)
        continue;
      const int s = act_slot_of_owner(owner[v]);
      out->grid_slot[v] = s;
      if (applies[v])
      {
        out->act_slot[v] = s;
        out->sites[static_cast<std::size_t>(s)].push_back(v);
      }
    }
  }
  return ids;
}

/// Placement of the graph's quantizers; requires attached slots to match the policy.
inline Placement placement(const Graph &g)
{
  Placement p;
  const auto ids = required_slots(g, &p);
  if (ids.size() != g.slots.size())
    throw ContractError("graph carries " + std::to_string(g.slots.size()) + " quantizer slots, placement needs " +
                        std::to_string(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i].first != g.slots[i].id || ids[i].second != g.slots[i].kind)
      throw ContractError("quantizer slot " + std::to_string(i) + " is '" + g.slots[i].id + "', expected '" +
                          ids[i].first + "'");
  return p;
}

/// Allocate unfitted quantizer slots at every placement site.
inline Graph attach_quantizers(Graph g, const QuantConfig &cfg)
{
  validate(g);
  for (int b : {cfg.weight_bits, cfg.act_bits})
    if (b < 2 || b > 16)
      throw ConfigError("bit-width " + std::to_string(b) + " outside [2,16]");
  if (cfg.weight_granularity == Granularity::PerChannel)
    for (const auto &l : g.layers)
      if (is_mac(l.kind) && l.weight.rank() < 2)
        throw ConfigError("per-channel weights unsupported on layer '" + l.name + "'");
  if (cfg.tied_add)
    for (auto &l : g.layers)
      if (l.kind == LayerKind::Add)
        l.tied = true;
  g.slots.clear();
  for (const auto &[id, kind] : required_slots(g))
  {
    QuantSlot s;
    s.id = id;
    s.kind = kind;
    if (kind == SlotKind::Weight)
    {
      s.scheme = cfg.weight_scheme;
      s.bitwidth = cfg.weight_bits;
      s.granularity = cfg.weight_granularity;
    }
    else
    {
      s.scheme = cfg.act_scheme;
      s.bitwidth = cfg.act_bits;
    }
    if (auto it = cfg.bit_overrides.find(id); it != cfg.bit_overrides.end())
    {
      if (it->second < 2 || it->second > 16)
        throw ConfigError("bit-width override for '" + id + "' outside [2,16]");
      s.bitwidth = it->second;
    }
    g.slots.push_back(std::move(s));
  }
  for (const auto &[id, bits] : cfg.bit_overrides)
    if (g.slot_index(id) < 0)
      throw ConfigError("bit-width override names unknown quantizer '" + id + "'");
  return g;
}

/// Copy with every quantizer bypassed except those selected.
template <typename Pred> Graph with_enabled_slots(Graph g, Pred keep)
{
  for (auto &s : g.slots)
    s.enabled = keep(s);
  return g;
}

// ---- layer surgery ------------------------------------------------------------

/// Remove single-input layers, rewiring consumers to the removed layer's input.
inline Graph erase_layers(const Graph &g, const std::vector<bool> &erase)
{
  std::vector<std::size_t> new_id(g.num_values());
  new_id[0] = 0;
  Graph out = g;
  out.layers.clear();
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    if (erase[k])
    {
      if (g.layers[k].inputs.size() != 1)
        throw ContractError("cannot erase multi-input layer '" + g.layers[k].name + "'");
      new_id[k + 1] = new_id[g.layers[k].inputs[0]];
      continue;
    }
    Layer l = g.layers[k];
    for (auto &v : l.inputs)
      v = new_id[v];
    out.layers.push_back(std::move(l));
    new_id[k + 1] = out.layers.size();
  }
  if (!g.layers.empty() && erase.back() && new_id.back() != out.layers.size())
    throw ContractError("erasing the output layer would leave a dangling output");
  return out;
}

/// Per-channel factor gamma/sqrt(var+eps) of a BN layer.
inline std::vector<double> bn_scale(const Layer &bn)
{
  std::vector<double> f(bn.gamma.numel());
  for (std::size_t k = 0; k < f.size(); ++k)
    f[k] = bn.gamma[k] / std::sqrt(bn.var[k] + bn.eps);
  return f;
}

/// Multiply output channel k of a MAC layer's weight by f[k].
inline void scale_output_channels(Layer &l, std::span<const double> f)
{
  const std::size_t per = l.weight.numel() / l.weight.dim(0);
  for (std::size_t k = 0; k < l.weight.dim(0); ++k)
    for (std::size_t i = 0; i < per; ++i)
      l.weight[k * per + i] *= f[k];
}

/// Index of the BN layer directly following MAC layer k (sole consumer), or -1.
inline int bn_after(const Graph &g, const std::vector<std::vector<std::size_t>> &cons, std::size_t k)
{
  if (!is_mac(g.layers[k].kind) || cons[k + 1].size() != 1)
    return -1;
  const auto c = cons[k + 1][0];
  return g.layers[c].kind == LayerKind::BatchNorm ? static_cast<int>(c) : -1;
}

/**
 * Merge every BatchNorm into the preceding Linear/Conv. The BN shift and scale
 * stay on the merged layer as metadata for the data-free transforms.
 */
inline Graph fold_bn(const Graph &g)
{
  if (g.quantized())
    throw ContractError("fold_bn expects a graph without quantizer slots");
  validate(g);
  const auto cons = consumers(g);
  Graph out = g;
  std::vector<bool> erase(g.layers.size(), false);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &bn = g.layers[k];
    if (bn.kind != LayerKind::BatchNorm)
      continue;
    const auto src = bn.inputs[0];
    if (src == 0 || !is_mac(g.layers[src - 1].kind) || cons[src].size() != 1)
      throw ContractError("unsupported pattern: batchnorm '" + bn.name +
                          "' is not directly preceded by a linear/conv layer without a branch");
    Layer &mac = out.layers[src - 1];
    const auto f = bn_scale(bn);
    scale_output_channels(mac, f);
    for (std::size_t c = 0; c < f.size(); ++c)
      mac.bias[c] = bn.beta[c] + f[c] * (mac.bias[c] - bn.mean[c]);
    mac.bn_meta = BnMeta{bn.gamma.vec(), bn.beta.vec()};
    erase[k] = true;
  }
  return erase_layers(out, erase);
}

} // namespace quantkit

#endif // QUANTKIT_GRAPH_HPP
