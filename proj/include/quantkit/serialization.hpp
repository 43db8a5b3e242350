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

#ifndef QUANTKIT_SERIALIZATION_HPP
#define QUANTKIT_SERIALIZATION_HPP

#include "quantkit/error.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/tensor.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

// Container format: a JSON manifest plus one binary blob of little-endian float32
// values. Each tensor entry records {shape, offset, length} in elements.

namespace quantkit
{

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

namespace io
{

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

class BlobWriter
{
public:
  json put(const Tensor &t)
  {
    json entry{{"shape", t.shape()}, {"offset", _data.size()}, {"length", t.numel()}};
    for (double v : t.vec())
      _data.push_back(static_cast<float>(v));
    return entry;
  }

  void write(const std::filesystem::path &path) const
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
      throw ParseError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char *>(_data.data()), static_cast<std::streamsize>(_data.size() * sizeof(float)));
    if (!f)
      throw ParseError("failed writing '" + path.string() + "'");
  }

private:
  std::vector<float> _data;
};

class BlobReader
{
public:
  explicit BlobReader(const std::filesystem::path &path)
  {
    std::ifstream f(path, std::ios::binary);
    if (!f)
      throw ParseError("cannot open blob '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(float) != 0)
      throw ParseError("blob '" + path.string() + "' size is not a multiple of 4 bytes");
    _data.resize(bytes.size() / sizeof(float));
    std::memcpy(_data.data(), bytes.data(), bytes.size());
  }

  Tensor get(const json &entry, const std::string &what) const
  {
    try
    {
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      if (shape_numel(shape) != length || shape.empty())
        throw ParseError("tensor '" + what + "': shape " + shape_str(shape) + " does not match length " +
                         std::to_string(length));
      if (offset + length > _data.size())
        throw ParseError("tensor '" + what + "' references bytes past the end of the blob (needs " +
                         std::to_string((offset + length) * 4) + ", blob has " + std::to_string(_data.size() * 4) + ")");
      std::vector<double> v(_data.begin() + static_cast<std::ptrdiff_t>(offset),
                            _data.begin() + static_cast<std::ptrdiff_t>(offset + length));
      try
      {
        return Tensor::from_external(shape, std::move(v));
      }
      catch (const Error &e)
      {
        throw ParseError("tensor '" + what + "': " + e.what());
      }
    }
    catch (const json::exception &e)
    {
      throw ParseError("tensor '" + what + "': malformed entry: " + e.what());
    }
  }

private:
  std::vector<float> _data;
};

inline json read_json(const std::filesystem::path &path)
{
  std::ifstream f(path);
  if (!f)
    throw ParseError("cannot open '" + path.string() + "'");
  try
  {
    return json::parse(f);
  }
  catch (const json::parse_error &e)
  {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path &path, const json &j)
{
  std::ofstream f(path, std::ios::trunc);
  if (!f)
    throw ParseError("cannot open '" + path.string() + "' for writing");
  f << j.dump(2) << '\n';
  if (!f)
    throw ParseError("failed writing '" + path.string() + "'");
}

inline std::filesystem::path blob_path_for(const std::filesystem::path &manifest)
{
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

} // namespace io

// ---- quantizer specs ------------------------------------------------------------

inline std::string_view to_string(Granularity g) { return g == Granularity::PerTensor ? "per_tensor" : "per_channel"; }

inline Granularity granularity_from_string(std::string_view s)
{
  if (s == "per_tensor")
    return Granularity::PerTensor;
  if (s == "per_channel")
    return Granularity::PerChannel;
  throw ParseError("unknown granularity '" + std::string(s) + "'");
}

inline json spec_to_json(const QuantizerSpec &s)
{
  json j{{"scheme", to_string(s.scheme)}, {"bitwidth", s.bitwidth}, {"granularity", to_string(s.granularity)}};
  if (s.granularity == Granularity::PerChannel)
    j["axis"] = s.axis;
  j["scale"] = s.scale;
  j["zero_point"] = s.zero_point;
  return j;
}

inline QuantizerSpec spec_from_json(const json &j)
{
  QuantizerSpec s;
  try
  {
    s.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    s.bitwidth = j.at("bitwidth").get<int>();
    s.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    s.axis = j.value("axis", std::size_t{0});
    s.scale = j.at("scale").get<std::vector<double>>();
    s.zero_point = j.at("zero_point").get<std::vector<std::int64_t>>();
    s.validate();
  }
  catch (const json::exception &e)
  {
    throw ParseError(std::string("malformed quantizer spec: ") + e.what());
  }
  catch (const ContractError &e)
  {
    throw ParseError(std::string("invalid quantizer spec: ") + e.what());
  }
  catch (const ConfigError &e)
  {
    throw ParseError(e.what());
  }
  return s;
}

// ---- model ------------------------------------------------------------------------

/// Whether every enabled slot is frozen and biases sit on their accumulator grids.
struct ModelFlags
{
  bool frozen = false;
};

inline void save_model(const Graph &g, const std::filesystem::path &path, ModelFlags flags = {})
{
  validate(g);
  io::BlobWriter blob;
  const auto blob_file = io::blob_path_for(path);
  json m;
  m["format_version"] = kFormatVersion;
  m["task"] = g.task;
  m["input_shape"] = g.input_shape;
  if (!g.input_mean.empty())
    m["input_stats"] = json{{"mean", g.input_mean}, {"std", g.input_std}};
  m["blob"] = blob_file.filename().string();
  json layers = json::array();
  for (const auto &l : g.layers)
  {
    json jl{{"name", l.name}, {"kind", to_string(l.kind)}};
    json inputs = json::array();
    for (auto v : l.inputs)
      inputs.push_back(g.value_name(v));
    jl["inputs"] = inputs;
    json attrs = json::object();
    json params = json::object();
    switch (l.kind)
    {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
        attrs["stride"] = l.stride;
        attrs["padding"] = l.padding;
        [[fallthrough]];
      case LayerKind::Linear:
        params["weight"] = blob.put(l.weight);
        params["bias"] = blob.put(l.bias);
        break;
      case LayerKind::BatchNorm:
        attrs["eps"] = l.eps;
        params["gamma"] = blob.put(l.gamma);
        params["beta"] = blob.put(l.beta);
        params["mean"] = blob.put(l.mean);
        params["var"] = blob.put(l.var);
        break;
      case LayerKind::ReLU6:
        if (!l.clip.empty())
          attrs["clip"] = l.clip;
        break;
      case LayerKind::Add:
        attrs["tied"] = l.tied;
        break;
      case LayerKind::AvgPool:
      case LayerKind::MaxPool:
        attrs["kernel"] = l.kernel;
        break;
      default:
        break;
    }
    if (!attrs.empty())
      jl["attrs"] = attrs;
    if (!params.empty())
      jl["params"] = params;
    if (l.bn_meta)
      jl["bn_meta"] = json{{"gamma", l.bn_meta->gamma}, {"beta", l.bn_meta->beta}};
    layers.push_back(jl);
  }
  m["layers"] = layers;
  if (g.quantized())
  {
    json slots = json::array();
    for (const auto &s : g.slots)
    {
      json js{{"id", s.id},
              {"kind", s.kind == SlotKind::Weight ? "weight" : "activation"},
              {"scheme", to_string(s.scheme)},
              {"bitwidth", s.bitwidth},
              {"granularity", to_string(s.granularity)},
              {"enabled", s.enabled}};
      js["spec"] = s.spec ? spec_to_json(*s.spec) : json(nullptr);
      slots.push_back(js);
    }
    m["quantization"] = json{{"frozen", flags.frozen}, {"slots", slots}};
  }
  io::write_json(path, m);
  blob.write(blob_file);
}

struct LoadedModel
{
  Graph graph;
  ModelFlags flags;
};

inline LoadedModel load_model_with_flags(const std::filesystem::path &path)
{
  const json m = io::read_json(path);
  LoadedModel out;
  Graph &g = out.graph;
  std::string where = "manifest";
  try
  {
    if (m.at("format_version").get<int>() != kFormatVersion)
      throw ParseError("unsupported format_version " + m.at("format_version").dump());
    g.task = m.value("task", std::string("classifier"));
    if (g.task != "classifier" && g.task != "regression")
      throw ParseError("unknown task '" + g.task + "'");
    g.input_shape = m.at("input_shape").get<Shape>();
    if (m.contains("input_stats"))
    {
      g.input_mean = m["input_stats"].at("mean").get<std::vector<double>>();
      g.input_std = m["input_stats"].at("std").get<std::vector<double>>();
      if (g.input_mean.size() != g.input_std.size())
        throw ParseError("input_stats mean/std lengths differ");
    }
    const io::BlobReader blob(path.parent_path() / m.at("blob").get<std::string>());
    std::map<std::string, std::size_t> value_of{{"input", 0}};
    const auto &layers = m.at("layers");
    for (std::size_t k = 0; k < layers.size(); ++k)
    {
      const auto &jl = layers[k];
      where = "layers[" + std::to_string(k) + "]";
      Layer l;
      l.name = jl.at("name").get<std::string>();
      where += " '" + l.name + "'";
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      for (const auto &in : jl.at("inputs"))
      {
        const auto name = in.get<std::string>();
        auto it = value_of.find(name);
        if (it == value_of.end())
          throw ParseError("input '" + name + "' is not produced by an earlier layer");
        l.inputs.push_back(it->second);
      }
      const json attrs = jl.value("attrs", json::object());
      const json params = jl.value("params", json::object());
      auto param = [&](const char *key) {
        if (!params.contains(key))
          throw ParseError(std::string("missing parameter '") + key + "'");
        return blob.get(params[key], l.name + "." + key);
      };
      switch (l.kind)
      {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
          l.stride = attrs.value("stride", std::size_t{1});
          l.padding = attrs.value("padding", std::size_t{0});
          [[fallthrough]];
        case LayerKind::Linear:
          l.weight = param("weight");
          l.bias = param("bias");
          break;
        case LayerKind::BatchNorm:
          l.eps = attrs.value("eps", 1e-5);
          l.gamma = param("gamma");
          l.beta = param("beta");
          l.mean = param("mean");
          l.var = param("var");
          break;
        case LayerKind::ReLU6:
          l.clip = attrs.value("clip", std::vector<double>{});
          break;
        case LayerKind::Add:
          l.tied = attrs.value("tied", false);
          break;
        case LayerKind::AvgPool:
        case LayerKind::MaxPool:
          l.kernel = attrs.value("kernel", std::size_t{2});
          break;
        default:
          break;
      }
      if (jl.contains("bn_meta"))
        l.bn_meta = BnMeta{jl["bn_meta"].at("gamma").get<std::vector<double>>(),
                           jl["bn_meta"].at("beta").get<std::vector<double>>()};
      if (value_of.count(l.name))
        throw ParseError("duplicate layer name");
      value_of[l.name] = k + 1;
      g.layers.push_back(std::move(l));
    }
    where = "quantization";
    if (m.contains("quantization"))
    {
      const auto &q = m["quantization"];
      out.flags.frozen = q.value("frozen", false);
      for (const auto &js : q.at("slots"))
      {
        QuantSlot s;
        s.id = js.at("id").get<std::string>();
        const auto kind = js.at("kind").get<std::string>();
        if (kind != "weight" && kind != "activation")
          throw ParseError("slot '" + s.id + "' has unknown kind '" + kind + "'");
        s.kind = kind == "weight" ? SlotKind::Weight : SlotKind::Activation;
        s.scheme = scheme_from_string(js.at("scheme").get<std::string>());
        s.bitwidth = js.at("bitwidth").get<int>();
        s.granularity = granularity_from_string(js.at("granularity").get<std::string>());
        s.enabled = js.value("enabled", true);
        if (js.contains("spec") && !js["spec"].is_null())
          s.spec = spec_from_json(js["spec"]);
        g.slots.push_back(std::move(s));
      }
    }
    where = "graph";
    validate(g);
    if (g.quantized())
      placement(g);
  }
  catch (const ParseError &e)
  {
    throw ParseError("'" + path.string() + "' " + where + ": " + e.what());
  }
  catch (const json::exception &e)
  {
    throw ParseError("'" + path.string() + "' " + where + ": " + e.what());
  }
  catch (const Error &e)
  {
    throw ParseError("'" + path.string() + "' " + where + ": " + e.what());
  }
  return out;
}

inline Graph load_model(const std::filesystem::path &path) { return load_model_with_flags(path).graph; }

// ---- datasets ---------------------------------------------------------------------

/// Inputs [N, ...] with optional labels: class ids [N] or regression targets [N, D].
struct Dataset
{
  Tensor inputs;
  std::optional<Tensor> labels;

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }

  std::vector<int> class_labels() const
  {
    if (!labels)
      throw ConfigError("dataset has no labels");
    std::vector<int> out;
    out.reserve(labels->numel());
    for (double v : labels->vec())
    {
      if (v != std::round(v) || v < 0)
        throw ConfigError("class labels must be non-negative integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  Dataset subset(std::span<const std::size_t> idx) const
  {
    Dataset d{ops::gather_rows(inputs, idx), std::nullopt};
    if (labels)
      d.labels = ops::gather_rows(*labels, idx);
    return d;
  }

  Dataset rows(std::size_t begin, std::size_t end) const
  {
    Dataset d{ops::slice_rows(inputs, begin, end), std::nullopt};
    if (labels)
      d.labels = ops::slice_rows(*labels, begin, end);
    return d;
  }
};

/// Writes the dataset as `batch_size`-row chunks named input_k / label_k.
inline void save_dataset(const Dataset &d, const std::filesystem::path &path, std::size_t batch_size = 0)
{
  const std::size_t n = d.size();
  if (n == 0)
    throw ContractError("cannot save an empty dataset");
  if (batch_size == 0)
    batch_size = n;
  io::BlobWriter blob;
  const auto blob_file = io::blob_path_for(path);
  json tensors = json::array();
  for (std::size_t b = 0, k = 0; b < n; b += batch_size, ++k)
  {
    const auto e = std::min(n, b + batch_size);
    json t = blob.put(ops::slice_rows(d.inputs, b, e));
    t["name"] = "input_" + std::to_string(k);
    tensors.push_back(t);
    if (d.labels)
    {
      json lt = blob.put(ops::slice_rows(*d.labels, b, e));
      lt["name"] = "label_" + std::to_string(k);
      tensors.push_back(lt);
    }
  }
  io::write_json(path, json{{"format_version", kFormatVersion},
                            {"kind", "dataset"},
                            {"blob", blob_file.filename().string()},
                            {"tensors", tensors}});
  blob.write(blob_file);
}

inline Dataset load_dataset(const std::filesystem::path &path)
{
  const json m = io::read_json(path);
  try
  {
    if (m.at("format_version").get<int>() != kFormatVersion)
      throw ParseError("unsupported format_version");
    const io::BlobReader blob(path.parent_path() / m.at("blob").get<std::string>());
    std::map<std::size_t, Tensor> inputs, labels;
    for (const auto &t : m.at("tensors"))
    {
      const auto name = t.at("name").get<std::string>();
      auto index_of = [&](const std::string &prefix) -> std::optional<std::size_t> {
        if (name.rfind(prefix, 0) != 0)
          return std::nullopt;
        return static_cast<std::size_t>(std::stoul(name.substr(prefix.size())));
      };
      if (auto i = index_of("input_"))
        inputs[*i] = blob.get(t, name);
      else if (auto j = index_of("label_"))
        labels[*j] = blob.get(t, name);
      else
        throw ParseError("unexpected tensor name '" + name + "'");
    }
    if (inputs.empty())
      throw ParseError("dataset has no input tensors");
    std::vector<Tensor> in_parts, label_parts;
    std::size_t expect = 0;
    for (auto &[k, t] : inputs)
    {
      if (k != expect++)
        throw ParseError("input tensors are not numbered consecutively from 0");
      in_parts.push_back(t);
      if (!labels.empty())
      {
        auto it = labels.find(k);
        if (it == labels.end())
          throw ParseError("missing label_" + std::to_string(k));
        if (it->second.dim(0) != t.dim(0))
          throw ParseError("label_" + std::to_string(k) + " row count differs from input_" + std::to_string(k));
        label_parts.push_back(it->second);
      }
    }
    if (!labels.empty() && labels.size() != inputs.size())
      throw ParseError("label tensors without matching inputs");
    Dataset d{ops::concat_rows(in_parts), std::nullopt};
    if (!label_parts.empty())
      d.labels = ops::concat_rows(label_parts);
    return d;
  }
  catch (const json::exception &e)
  {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  catch (const std::logic_error &e)
  {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  catch (const ParseError &e)
  {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  catch (const Error &e)
  {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

} // namespace quantkit

#endif // QUANTKIT_SERIALIZATION_HPP
