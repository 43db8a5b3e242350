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

#ifndef QUANTKIT_QAT_HPP
#define QUANTKIT_QAT_HPP

#include "quantkit/autograd.hpp"
#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/metrics.hpp"
#include "quantkit/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace quantkit
{

enum class Optimizer
{
  Adam,
  SGD,
};

enum class BnHandling
{
  StaticFold,
  KeepBnPerChannel,
};

enum class LossKind
{
  CrossEntropy,
  MSE,
};

inline std::string_view to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }
inline std::string_view to_string(BnHandling b) { return b == BnHandling::StaticFold ? "static-fold" : "keep-bn-per-channel"; }
inline std::string_view to_string(LossKind l) { return l == LossKind::CrossEntropy ? "cross_entropy" : "mse"; }

inline Optimizer optimizer_from_string(std::string_view s)
{
  if (s == "adam")
    return Optimizer::Adam;
  if (s == "sgd")
    return Optimizer::SGD;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

inline BnHandling bn_handling_from_string(std::string_view s)
{
  if (s == "static-fold")
    return BnHandling::StaticFold;
  if (s == "keep-bn-per-channel")
    return BnHandling::KeepBnPerChannel;
  throw ConfigError("unknown BN handling '" + std::string(s) + "'");
}

inline constexpr double kSgdQuantLrFactor = 1e-2;
inline constexpr double kMinScale = 1e-12;

struct QatConfig
{
  int epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  Optimizer optimizer = Optimizer::Adam;
  BnHandling bn = BnHandling::StaticFold;
  bool learnable_ranges = true;
  LossKind loss = LossKind::CrossEntropy;
  double val_fraction = 0.2;
  bool cosine_decay = true; // anneal both learning rates to 0 over the run
  std::uint64_t seed = 0;

  /// Keeping BN during training needs per-channel weight quantizers to absorb it into.
  void validate(const Graph &g) const
  {
    if (epochs < 0 || batch_size == 0 || !(lr >= 0.0) || !(val_fraction >= 0.0 && val_fraction < 1.0))
      throw ConfigError("invalid QAT schedule (epochs, batch size, lr or validation fraction)");
    if (bn == BnHandling::KeepBnPerChannel)
      for (const auto &s : g.slots)
        if (s.kind == SlotKind::Weight && s.granularity != Granularity::PerChannel)
          throw ConfigError("keep-bn-per-channel needs per-channel weights; '" + s.id + "' is per-tensor");
  }
};

/// Learning rates per parameter group. quant_lr is empty when ranges are fixed.
struct LrPolicy
{
  double weight_lr = 0.0;
  std::optional<double> quant_lr;
};

inline LrPolicy quant_param_lr_policy(const QatConfig &c)
{
  LrPolicy p{c.lr, std::nullopt};
  if (c.learnable_ranges)
    p.quant_lr = c.optimizer == Optimizer::SGD ? c.lr * kSgdQuantLrFactor : c.lr;
  return p;
}

/// Trainable leaves plus optimizer state.
struct TrainState
{
  ParamBinding bind;
  std::vector<ag::Var> params;
  std::vector<bool> quant_param; // per params entry
  std::vector<std::pair<std::size_t, Tensor>> initial_log_scale;
  ag::AdamState adam;
  long step = 0;
  int epoch = 0;
};

inline TrainState init_train_state(const Graph &g, bool learnable_ranges)
{
  TrainState st;
  auto add = [&](std::map<std::size_t, ag::Var> &m, std::size_t k, const Tensor &t, bool quant) {
    ag::Var v = ag::Var::parameter(t);
    m.emplace(k, v);
    st.params.push_back(v);
    st.quant_param.push_back(quant);
  };
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &l = g.layers[k];
    if (is_mac(l.kind))
    {
      add(st.bind.weight, k, l.weight, false);
      add(st.bind.bias, k, l.bias, false);
    }
    else if (l.kind == LayerKind::BatchNorm)
    {
      add(st.bind.gamma, k, l.gamma, false);
      add(st.bind.beta, k, l.beta, false);
    }
  }
  if (learnable_ranges)
    for (std::size_t s = 0; s < g.slots.size(); ++s)
    {
      const auto &slot = g.slots[s];
      if (!slot.enabled)
        continue;
      if (!slot.spec)
        throw ConfigError("quantizer '" + slot.id + "' must be initialized before QAT");
      const std::size_t n = slot.spec->groups();
      Tensor ls({n});
      for (std::size_t i = 0; i < n; ++i)
        ls[i] = std::log(slot.spec->scale[i]);
      st.initial_log_scale.emplace_back(s, ls);
      add(st.bind.log_scale, s, ls, true);
      if (slot.spec->scheme == Scheme::AsymmetricUnsigned)
      {
        Tensor z({n});
        for (std::size_t i = 0; i < n; ++i)
          z[i] = static_cast<double>(slot.spec->zero_point[i]);
        add(st.bind.zero_point, s, z, true);
      }
    }
  return st;
}

/// A training batch: class labels for cross-entropy or targets for MSE.
struct Batch
{
  Tensor x;
  std::vector<int> labels;
  Tensor targets;
};

struct QatStep
{
  double loss = 0.0;
  std::vector<Tensor> grads; // aligned with TrainState::params
};

inline ag::Var qat_loss(const ag::Var &out, const Batch &b, LossKind kind)
{
  if (kind == LossKind::CrossEntropy)
    return ag::softmax_cross_entropy(out, b.labels);
  return ag::mse_loss(out, ag::Var(b.targets));
}

/// Simulated-quantization forward and straight-through backward on a batch.
inline QatStep qat_forward_backward(const Graph &g, TrainState &st, const Batch &b, LossKind kind)
{
  for (auto &p : st.params)
    p.zero_grad();
  const auto trace = run_graph(g, ag::Var(b.x), ExecMode::Sim, &st.bind);
  const ag::Var loss = qat_loss(trace.output(), b, kind);
  ag::backward(loss);
  QatStep r;
  r.loss = loss.value()[0];
  r.grads.reserve(st.params.size());
  for (auto &p : st.params)
    r.grads.push_back(p.has_grad() ? p.grad() : Tensor(p.value().shape()));
  return r;
}

/// Write trained values back into a graph; learned zero-points are rounded onto the grid.
inline Graph export_trained(const Graph &input, const TrainState &st)
{
  Graph g = input;
  for (const auto &[k, v] : st.bind.weight)
    g.layers[k].weight = v.value();
  for (const auto &[k, v] : st.bind.bias)
    g.layers[k].bias = v.value();
  for (const auto &[k, v] : st.bind.gamma)
    g.layers[k].gamma = v.value();
  for (const auto &[k, v] : st.bind.beta)
    g.layers[k].beta = v.value();
  for (const auto &[s, init] : st.initial_log_scale)
  {
    auto &spec = *g.slots[s].spec;
    const Tensor &ls = st.bind.log_scale.at(s).value();
    for (std::size_t i = 0; i < ls.numel(); ++i)
      if (ls[i] != init[i]) // untouched groups keep their exact scale
        spec.scale[i] = std::exp(ls[i]);
  }
  for (const auto &[s, v] : st.bind.zero_point)
  {
    auto &spec = *g.slots[s].spec;
    for (std::size_t i = 0; i < v.value().numel(); ++i)
      spec.zero_point[i] = static_cast<std::int64_t>(
          std::clamp(round_half_even(v.value()[i]), 0.0, static_cast<double>(spec.code_max())));
  }
  return g;
}

/// Mean scale per quantizer class, for the metrics stream.
inline json mean_scales(const Graph &g)
{
  double sw = 0, sa = 0;
  std::size_t nw = 0, na = 0;
  for (const auto &s : g.slots)
    if (s.spec && s.enabled)
      for (double v : s.spec->scale)
      {
        (s.kind == SlotKind::Weight ? sw : sa) += std::abs(v);
        ++(s.kind == SlotKind::Weight ? nw : na);
      }
  return json{{"weight", nw ? sw / static_cast<double>(nw) : 0.0}, {"activation", na ? sa / static_cast<double>(na) : 0.0}};
}

struct Evaluation
{
  double loss = 0.0;
  double metric = 0.0; // accuracy, or negative MSE for regression
};

inline Batch make_batch(const Dataset &d, LossKind kind)
{
  Batch b{d.inputs, {}, {}};
  if (kind == LossKind::CrossEntropy)
    b.labels = d.class_labels();
  else
  {
    if (!d.labels)
      throw ConfigError("MSE training needs regression targets");
    b.targets = *d.labels;
  }
  return b;
}

inline Evaluation evaluate_sim(const Graph &g, const Dataset &d, LossKind kind)
{
  const Batch b = make_batch(d, kind);
  const Tensor out = forward_sim_quant(g, b.x);
  Evaluation e;
  e.loss = qat_loss(ag::Var(out), b, kind).value()[0];
  e.metric = kind == LossKind::CrossEntropy ? accuracy(out, b.labels) : -output_mse(out, b.targets);
  return e;
}

struct TrainResult
{
  Graph graph; // best validation checkpoint
  json history = json::array();
  int best_epoch = 0;
  Evaluation best;
};

/**
 * Quantization-aware training of a graph whose quantizers are initialized.
 * Epoch 0 is the initial model; the best validation epoch is returned.
 */
inline TrainResult train(const Graph &g, const Dataset &data, const QatConfig &cfg, std::ostream *metrics = nullptr)
{
  cfg.validate(g);
  const std::size_t n = data.size();
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
  if (n < 2 || n_val >= n)
    throw ConfigError("training set too small for the validation split");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Dataset val = data.subset(std::span(idx).first(n_val == 0 ? n : n_val));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());

  TrainState st = init_train_state(g, cfg.learnable_ranges);
  const LrPolicy lr = quant_param_lr_policy(cfg);
  std::vector<double> lr_scale;
  for (bool q : st.quant_param)
    lr_scale.push_back(q ? (cfg.lr > 0 ? *lr.quant_lr / cfg.lr : 0.0) : 1.0);
  std::vector<Tensor *> ptrs;
  for (auto &p : st.params)
    ptrs.push_back(&p.mutable_value());

  TrainResult res;
  res.graph = g;
  res.best = evaluate_sim(g, val, cfg.loss);
  auto emit = [&](const json &rec) {
    res.history.push_back(rec);
    if (metrics)
      *metrics << rec.dump() << '\n';
  };
  emit({{"epoch", 0}, {"train_loss", nullptr}, {"val_loss", res.best.loss}, {"val_metric", res.best.metric},
        {"mean_scale", mean_scales(g)}});

  const std::size_t per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(std::max<std::size_t>(1, per_epoch * static_cast<std::size_t>(cfg.epochs)));
  for (int e = 1; e <= cfg.epochs; ++e)
  {
    st.epoch = e;
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < train_idx.size(); b += cfg.batch_size)
    {
      const auto end = std::min(train_idx.size(), b + cfg.batch_size);
      const Batch batch = make_batch(data.subset(std::span(train_idx).subspan(b, end - b)), cfg.loss);
      const QatStep step = qat_forward_backward(g, st, batch, cfg.loss);
      if (!std::isfinite(step.loss))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(e) + ", step " +
                             std::to_string(st.step) + " (last finite epoch loss " +
                             std::to_string(batches ? loss_sum / static_cast<double>(batches) : 0.0) + ")");
      double step_lr = cfg.lr;
      if (cfg.cosine_decay)
        step_lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(st.step) / total_steps));
      if (cfg.optimizer == Optimizer::Adam)
        ag::adam_step(ptrs, step.grads, st.adam, step_lr, 0.9, 0.999, 1e-8, lr_scale);
      else
        ag::sgd_step(ptrs, step.grads, step_lr, lr_scale);
      for (auto &[s, v] : st.bind.log_scale)
      {
        Tensor &ls = v.mutable_value();
        for (std::size_t i = 0; i < ls.numel(); ++i)
          ls[i] = std::max(ls[i], std::log(kMinScale));
      }
      ++st.step;
      loss_sum += step.loss;
      ++batches;
    }
    const Graph snapshot = export_trained(g, st);
    const Evaluation ev = evaluate_sim(snapshot, val, cfg.loss);
    emit({{"epoch", e}, {"train_loss", loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1))},
          {"val_loss", ev.loss}, {"val_metric", ev.metric}, {"mean_scale", mean_scales(snapshot)}});
    if (ev.metric > res.best.metric || (ev.metric == res.best.metric && ev.loss < res.best.loss))
    {
      res.best = ev;
      res.best_epoch = e;
      res.graph = snapshot;
    }
  }
  return res;
}

// ---- batch norm handling --------------------------------------------------------

/// Static folding before training; the folded weights and biases are then trained.
inline Graph fold_bn_static_for_qat(const Graph &g) { return fold_bn(g); }

/// Channels whose BN scale was negative: weights flipped, scale kept positive.
struct AbsorbBnResult
{
  Graph graph;
  json flipped = json::array();
};

/**
 * Merge BN kept during training into the preceding layer and its per-channel
 * weight scales: s_k <- |f_k| s_k, W_k <- f_k W_k, b_k <- beta_k + f_k (b_k - mu_k).
 */
inline AbsorbBnResult absorb_bn_into_channel_scales(const Graph &input)
{
  const Placement p = placement(input);
  const auto cons = consumers(input);
  AbsorbBnResult res;
  Graph g = input;
  std::vector<bool> erase(g.layers.size(), false);
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const Layer &bn = input.layers[k];
    if (bn.kind != LayerKind::BatchNorm)
      continue;
    const auto src = bn.inputs[0];
    if (src == 0 || !is_mac(input.layers[src - 1].kind) || cons[src].size() != 1)
      throw ContractError("unsupported pattern: batchnorm '" + bn.name + "' does not follow a linear/conv layer");
    Layer &mac = g.layers[src - 1];
    const int ws = p.weight_slot[src - 1];
    auto &wslot = g.slots[static_cast<std::size_t>(ws)];
    if (!wslot.spec || wslot.spec->granularity != Granularity::PerChannel)
      throw ContractError("absorbing batchnorm '" + bn.name + "' needs fitted per-channel weights on '" + mac.name + "'");
    const auto f = bn_scale(bn);
    scale_output_channels(mac, f);
    for (std::size_t c = 0; c < f.size(); ++c)
    {
      mac.bias[c] = bn.beta[c] + f[c] * (mac.bias[c] - bn.mean[c]);
      wslot.spec->scale[c] *= std::abs(f[c]);
      if (f[c] < 0)
        res.flipped.push_back({{"layer", mac.name}, {"channel", c}});
    }
    mac.bn_meta = BnMeta{bn.gamma.vec(), bn.beta.vec()};
    if (const int bs = g.slot_index(bn.name + ".out"); bs >= 0)
      g.slots[static_cast<std::size_t>(bs)].id = mac.name + ".out";
    erase[k] = true;
  }
  Graph out = erase_layers(g, erase);
  // Reorder slots to the placement of the merged graph.
  std::vector<QuantSlot> ordered;
  for (const auto &[id, kind] : required_slots(out))
  {
    const int i = out.slot_index(id);
    if (i < 0)
      throw ContractError("absorbing batchnorm left quantizer '" + id + "' without a spec");
    ordered.push_back(out.slots[static_cast<std::size_t>(i)]);
  }
  out.slots = std::move(ordered);
  placement(out);
  res.graph = std::move(out);
  return res;
}

} // namespace quantkit

#endif // QUANTKIT_QAT_HPP
