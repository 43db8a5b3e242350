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

#ifndef QUANTKIT_PIPELINES_HPP
#define QUANTKIT_PIPELINES_HPP

#include "quantkit/adaround.hpp"
#include "quantkit/calibration.hpp"
#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/int_executor.hpp"
#include "quantkit/metrics.hpp"
#include "quantkit/ptq_transforms.hpp"
#include "quantkit/qat.hpp"
#include "quantkit/serialization.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace quantkit
{

enum class BiasCorrMode
{
  Empirical,
  Analytic,
  Off,
};

inline std::string_view to_string(BiasCorrMode m)
{
  switch (m)
  {
    case BiasCorrMode::Empirical:
      return "empirical";
    case BiasCorrMode::Analytic:
      return "analytic";
    case BiasCorrMode::Off:
      return "off";
  }
  return "?";
}

inline BiasCorrMode bias_corr_from_string(std::string_view s)
{
  if (s == "empirical")
    return BiasCorrMode::Empirical;
  if (s == "analytic")
    return BiasCorrMode::Analytic;
  if (s == "off")
    return BiasCorrMode::Off;
  throw ConfigError("unknown bias correction mode '" + std::string(s) + "'");
}

/// Pipeline settings. Unset optionals are resolved from the available data.
struct PipelineConfig
{
  QuantConfig quant;
  RangeMethod weight_range = RangeMethod::MSE;
  std::optional<ActRangeMethod> act_range;
  std::optional<bool> adaround;
  AdaRoundConfig adaround_cfg;
  std::optional<BiasCorrMode> bias_corr;
  bool cle = true;
  std::uint64_t seed = 0;
  QatConfig qat;
};

namespace detail
{

template <typename T> void take(const json &j, const char *key, T &out)
{
  if (j.contains(key))
    out = j.at(key).get<T>();
}

inline void reject_unknown(const json &j, std::initializer_list<const char *> keys, const std::string &where)
{
  for (const auto &[k, v] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char *x) { return k == x; }))
      throw ConfigError("unknown key '" + k + "' in " + where);
}

} // namespace detail

/// Overlay a JSON config onto `cfg`; keys mirror the command-line flags.
inline void apply_config_json(PipelineConfig &cfg, const json &j)
{
  try
  {
    if (!j.is_object())
      throw ConfigError("config must be a JSON object");
    detail::reject_unknown(j,
                           {"weight_scheme", "weight_bits", "weight_granularity", "act_scheme", "act_bits", "weight_range",
                            "act_range", "adaround", "adaround_config", "bias_correction", "cle", "tied_add",
                            "bit_overrides", "seed", "qat"},
                           "config");
    auto &q = cfg.quant;
    if (j.contains("weight_scheme"))
      q.weight_scheme = scheme_from_string(j["weight_scheme"].get<std::string>());
    if (j.contains("act_scheme"))
      q.act_scheme = scheme_from_string(j["act_scheme"].get<std::string>());
    if (j.contains("weight_granularity"))
      q.weight_granularity = granularity_from_string(j["weight_granularity"].get<std::string>());
    detail::take(j, "weight_bits", q.weight_bits);
    detail::take(j, "act_bits", q.act_bits);
    detail::take(j, "tied_add", q.tied_add);
    if (j.contains("bit_overrides"))
      q.bit_overrides = j["bit_overrides"].get<std::map<std::string, int>>();
    if (j.contains("weight_range"))
      cfg.weight_range = weight_range_from_string(j["weight_range"].get<std::string>());
    if (j.contains("act_range"))
      cfg.act_range = act_range_from_string(j["act_range"].get<std::string>());
    if (j.contains("adaround"))
      cfg.adaround = j["adaround"].get<bool>();
    if (j.contains("bias_correction"))
      cfg.bias_corr = bias_corr_from_string(j["bias_correction"].get<std::string>());
    detail::take(j, "cle", cfg.cle);
    detail::take(j, "seed", cfg.seed);
    if (j.contains("adaround_config"))
    {
      const auto &a = j["adaround_config"];
      detail::reject_unknown(a, {"iterations", "lambda", "beta_start", "beta_end", "warmup", "lr", "batch_size"},
                             "adaround_config");
      auto &c = cfg.adaround_cfg;
      detail::take(a, "iterations", c.iterations);
      detail::take(a, "lambda", c.lambda);
      detail::take(a, "beta_start", c.beta_start);
      detail::take(a, "beta_end", c.beta_end);
      detail::take(a, "warmup", c.warmup);
      detail::take(a, "lr", c.lr);
      detail::take(a, "batch_size", c.batch_size);
    }
    if (j.contains("qat"))
    {
      const auto &a = j["qat"];
      detail::reject_unknown(
          a, {"epochs", "batch_size", "lr", "optimizer", "bn_handling", "learnable_ranges", "val_fraction", "cosine_decay"},
          "qat");
      auto &c = cfg.qat;
      detail::take(a, "epochs", c.epochs);
      detail::take(a, "batch_size", c.batch_size);
      detail::take(a, "lr", c.lr);
      detail::take(a, "learnable_ranges", c.learnable_ranges);
      detail::take(a, "val_fraction", c.val_fraction);
      detail::take(a, "cosine_decay", c.cosine_decay);
      if (a.contains("optimizer"))
        c.optimizer = optimizer_from_string(a["optimizer"].get<std::string>());
      if (a.contains("bn_handling"))
        c.bn = bn_handling_from_string(a["bn_handling"].get<std::string>());
    }
  }
  catch (const json::exception &e)
  {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline json quant_config_json(const QuantConfig &q)
{
  return json{{"weight_scheme", to_string(q.weight_scheme)},
              {"weight_bits", q.weight_bits},
              {"weight_granularity", to_string(q.weight_granularity)},
              {"act_scheme", to_string(q.act_scheme)},
              {"act_bits", q.act_bits},
              {"tied_add", q.tied_add},
              {"bit_overrides", q.bit_overrides}};
}

// ---- metrics on datasets ----------------------------------------------------------

/// Task metric of outputs on a labelled dataset: accuracy for classifiers, MSE otherwise.
inline double task_metric(const Graph &g, const Tensor &out, const Dataset &d)
{
  if (!d.labels)
    throw ConfigError("metric needs a labelled dataset");
  if (g.task == "classifier")
    return accuracy(out, d.class_labels());
  return output_mse(out, *d.labels);
}

inline std::string_view metric_name(const Graph &g) { return g.task == "classifier" ? "accuracy" : "mse"; }

// ---- PTQ --------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 7> kPtqSteps{
    "preprocess",           "cross_layer_equalization", "add_quantizers",          "weight_range_setting",
    "adaround",             "bias_correction",          "activation_range_setting",
};

struct PtqResult
{
  Graph graph; // frozen
  json report;
};

inline bool has_batchnorm(const Graph &g)
{
  return std::any_of(g.layers.begin(), g.layers.end(), [](const Layer &l) { return l.kind == LayerKind::BatchNorm; });
}

inline bool has_bn_meta(const Graph &g)
{
  return std::any_of(g.layers.begin(), g.layers.end(), [](const Layer &l) { return l.bn_meta.has_value(); });
}

/**
 * The standard PTQ pipeline. Without calibration data the data-free branch is taken:
 * no AdaRound, BN-based activation ranges and analytic bias correction.
 */
inline PtqResult run_ptq(const Graph &model, const Dataset *calib, const Dataset *eval, const PipelineConfig &cfg)
{
  const bool data_free = calib == nullptr;
  if (calib && calib->size() == 0)
    throw ConfigError("calibration set is empty");
  const ActRangeMethod default_act = data_free                      ? ActRangeMethod::BN
                                     : model.task == "classifier" ? ActRangeMethod::XentLast
                                                                  : ActRangeMethod::MSE;
  const ActRangeMethod act = cfg.act_range.value_or(default_act);
  if (data_free && act != ActRangeMethod::BN)
    throw ConfigError("activation_range_setting: method '" + std::string(to_string(act)) +
                      "' needs calibration data (--calib)");
  const bool adaround = cfg.adaround.value_or(!data_free);
  if (data_free && adaround)
    throw ConfigError("adaround: needs calibration data (--calib)");
  if (data_free && cfg.bias_corr == BiasCorrMode::Empirical)
    throw ConfigError("bias_correction: empirical mode needs calibration data (--calib)");

  json steps = json::array();
  auto step = [&](std::string_view name, json rec) {
    rec["step"] = name;
    steps.push_back(std::move(rec));
  };
  auto skipped = [](const std::string &why) { return json{{"status", "skipped"}, {"reason", why}}; };
  std::optional<double> fp_metric;
  if (eval)
    fp_metric = task_metric(model, forward_fp(model, eval->inputs), *eval);
  auto metric_of = [&](const Graph &g) -> json {
    if (!eval)
      return nullptr;
    return task_metric(g, forward_sim_quant(g, eval->inputs), *eval);
  };

  Graph g = model;
  {
    json rec{{"status", "done"}};
    json folded = json::array();
    for (const auto &l : g.layers)
      if (l.kind == LayerKind::BatchNorm)
        folded.push_back(l.name);
    g = fold_bn(g);
    rec["folded_batchnorm"] = folded;
    step(kPtqSteps[0], rec);
  }
  if (cfg.cle)
  {
    auto cle = apply_cle(g);
    g = cle.graph;
    auto absorbed = absorb_bias(g, calib ? &calib->inputs : nullptr, false);
    g = absorbed.graph;
    step(kPtqSteps[1], json{{"status", "done"}, {"equalization", cle.record}, {"bias_absorption", absorbed.record}});
  }
  else
    step(kPtqSteps[1], skipped("disabled"));

  g = attach_quantizers(g, cfg.quant);
  {
    json ids = json::array();
    for (const auto &s : g.slots)
      ids.push_back(s.id);
    step(kPtqSteps[2], json{{"status", "done"}, {"config", quant_config_json(cfg.quant)}, {"quantizers", ids}});
  }

  auto weights_metric = [&] { return metric_of(weights_only(g)); };
  {
    auto rec = fit_weight_quantizers(g, cfg.weight_range);
    step(kPtqSteps[3], json{{"status", "done"}, {"method", to_string(cfg.weight_range)}, {"quantizers", rec},
                            {"metric_weights_only", weights_metric()}});
  }
  if (adaround)
  {
    AdaRoundConfig ac = cfg.adaround_cfg;
    ac.seed = cfg.seed;
    auto r = apply_adaround(g, calib->inputs, ac);
    g = r.graph;
    json rec{{"status", "done"}, {"metric_weights_only", weights_metric()}};
    rec.update(r.record);
    step(kPtqSteps[4], rec);
  }
  else
    step(kPtqSteps[4], skipped(data_free ? "no calibration data" : "disabled"));

  BiasCorrMode bc = cfg.bias_corr.value_or(
      data_free ? (has_bn_meta(g) ? BiasCorrMode::Analytic : BiasCorrMode::Off)
                : (adaround ? BiasCorrMode::Off : BiasCorrMode::Empirical));
  if (bc == BiasCorrMode::Empirical)
  {
    auto r = bias_correct_empirical(g, calib->inputs);
    g = r.graph;
    json rec{{"status", "done"}, {"metric_weights_only", weights_metric()}};
    rec.update(r.record);
    step(kPtqSteps[5], rec);
  }
  else if (bc == BiasCorrMode::Analytic)
  {
    auto r = bias_correct_analytic(g);
    g = r.graph;
    json rec{{"status", "done"}, {"metric_weights_only", weights_metric()}};
    rec.update(r.record);
    step(kPtqSteps[5], rec);
  }
  else
    step(kPtqSteps[5], skipped(adaround ? "superseded by adaround" : "disabled"));

  {
    json rec = act == ActRangeMethod::BN ? fit_activation_quantizers_data_free(g)
                                         : fit_activation_quantizers(g, calib->inputs, act);
    g = freeze_for_integer(g);
    step(kPtqSteps[6], json{{"status", "done"}, {"method", to_string(act)}, {"quantizers", rec}, {"metric", metric_of(g)}});
  }

  json metrics{{"name", metric_name(model)}, {"fp32", nullptr}, {"quantized", nullptr}, {"delta", nullptr}};
  if (eval)
  {
    const double qm = task_metric(g, forward_sim_quant(g, eval->inputs), *eval);
    metrics["fp32"] = *fp_metric;
    metrics["quantized"] = qm;
    metrics["delta"] = qm - *fp_metric;
  }
  json quantizers = json::array();
  for (const auto &s : g.slots)
    quantizers.push_back({{"id", s.id}, {"spec", spec_to_json(*s.spec)}});
  PtqResult res;
  res.graph = std::move(g);
  res.report = json{{"command", "ptq"},
                    {"data_free", data_free},
                    {"seed", cfg.seed},
                    {"resolved",
                     {{"weight_range", to_string(cfg.weight_range)},
                      {"act_range", to_string(act)},
                      {"adaround", adaround},
                      {"bias_correction", to_string(bc)},
                      {"cle", cfg.cle}}},
                    {"steps", steps},
                    {"metrics", metrics},
                    {"quantizers", quantizers}};
  return res;
}

// ---- QAT --------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 6> kQatSteps{
    "preprocess", "cross_layer_equalization", "add_quantizers", "range_estimation",
    "learnable_quantization_parameters", "train",
};

struct QatResult
{
  Graph graph; // frozen
  json report;
  json history;
};

/// Quantization-aware training pipeline; `metrics` receives one JSON line per epoch.
inline QatResult run_qat(const Graph &model, const Dataset &train_data, const PipelineConfig &cfg,
                         std::ostream *metrics = nullptr)
{
  if (!train_data.labels)
    throw ConfigError("train: QAT needs labelled training data");
  QatConfig qc = cfg.qat;
  qc.seed = cfg.seed;
  qc.loss = model.task == "classifier" ? LossKind::CrossEntropy : LossKind::MSE;
  const bool keep_bn = qc.bn == BnHandling::KeepBnPerChannel;
  if (keep_bn && cfg.quant.weight_granularity != Granularity::PerChannel)
    throw ConfigError("preprocess: keep-bn-per-channel needs per-channel weight quantization");
  json steps = json::array();
  auto step = [&](std::string_view name, json rec) {
    rec["step"] = name;
    steps.push_back(std::move(rec));
  };
  Graph g = model;
  if (keep_bn)
    step(kQatSteps[0], json{{"status", "done"}, {"bn_handling", to_string(qc.bn)}});
  else
  {
    g = fold_bn_static_for_qat(g);
    step(kQatSteps[0], json{{"status", "done"}, {"bn_handling", to_string(qc.bn)}});
  }
  if (cfg.cle && !has_batchnorm(g))
  {
    auto cle = apply_cle(g);
    g = cle.graph;
    step(kQatSteps[1], json{{"status", "done"}, {"equalization", cle.record}});
  }
  else
    step(kQatSteps[1], json{{"status", "skipped"}, {"reason", cfg.cle ? "batchnorm kept during training" : "disabled"}});
  g = attach_quantizers(g, cfg.quant);
  step(kQatSteps[2], json{{"status", "done"}, {"config", quant_config_json(cfg.quant)}});
  {
    const ActRangeMethod act = cfg.act_range.value_or(ActRangeMethod::MSE);
    if (act == ActRangeMethod::BN)
      throw ConfigError("range_estimation: QAT initializes ranges from training data, not BN statistics");
    json w = fit_weight_quantizers(g, cfg.weight_range);
    json a = fit_activation_quantizers(g, train_data.inputs, act);
    step(kQatSteps[3], json{{"status", "done"},
                            {"weight_method", to_string(cfg.weight_range)},
                            {"act_method", to_string(act)},
                            {"weights", w},
                            {"activations", a}});
  }
  const LrPolicy lr = quant_param_lr_policy(qc);
  step(kQatSteps[4], json{{"status", qc.learnable_ranges ? "done" : "skipped"},
                          {"weight_lr", lr.weight_lr},
                          {"quant_lr", lr.quant_lr ? json(*lr.quant_lr) : json(nullptr)},
                          {"optimizer", to_string(qc.optimizer)}});
  TrainResult tr = train(g, train_data, qc, metrics);
  json train_rec{{"status", "done"}, {"epochs", qc.epochs}, {"best_epoch", tr.best_epoch},
                 {"best_val_metric", tr.best.metric}, {"best_val_loss", tr.best.loss}};
  Graph trained = tr.graph;
  if (keep_bn)
  {
    auto ab = absorb_bn_into_channel_scales(trained);
    trained = ab.graph;
    train_rec["absorbed_batchnorm"] = json{{"flipped_channels", ab.flipped}};
  }
  step(kQatSteps[5], train_rec);
  QatResult res;
  res.graph = freeze_for_integer(trained);
  res.history = tr.history;
  res.report = json{{"command", "qat"}, {"seed", cfg.seed}, {"steps", steps}};
  return res;
}

// ---- diagnose ---------------------------------------------------------------------

/// Min, quartiles and max of a sample.
inline json five_number_summary(std::vector<double> v)
{
  if (v.empty())
    return nullptr;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
  };
  return json{{"min", v.front()}, {"q1", q(0.25)}, {"median", q(0.5)}, {"q3", q(0.75)}, {"max", v.back()}};
}

/// Per-channel samples along `axis`.
inline std::vector<std::vector<double>> split_channels(const Tensor &t, std::size_t axis)
{
  const std::size_t c = t.dim(axis);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < t.rank(); ++d)
    inner *= t.dim(d);
  std::vector<std::vector<double>> out(c);
  for (std::size_t i = 0; i < t.numel(); ++i)
    out[(i / inner) % c].push_back(t[i]);
  return out;
}

/// Ratio of the largest to the smallest per-output-channel absolute weight range.
inline double channel_range_spread(const Tensor &w)
{
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto &ch : split_channels(w, 0))
  {
    double m = 0.0;
    for (double v : ch)
      m = std::max(m, std::abs(v));
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

inline constexpr double kSpreadThreshold = 10.0;
inline constexpr std::size_t kFlaggedTop = 3;

/**
 * Debugging report for a quantized model on labelled calibration data. A model without
 * quantizers is first given quantizers fitted per `cfg` (no transforms).
 */
inline json run_diagnose(const Graph &model, const Dataset &calib, const PipelineConfig &cfg)
{
  if (!calib.labels)
    throw ConfigError("diagnose needs labelled calibration data for its metric");
  Graph g = model;
  bool fitted_here = false;
  if (!g.quantized())
  {
    g = attach_quantizers(fold_bn(g), cfg.quant);
    fit_weight_quantizers(g, cfg.weight_range);
    const auto act = cfg.act_range.value_or(ActRangeMethod::MSE);
    if (act == ActRangeMethod::BN)
      fit_activation_quantizers_data_free(g);
    else
      fit_activation_quantizers(g, calib.inputs, act);
    fitted_here = true;
  }
  for (const auto &s : g.slots)
    if (!s.spec)
      throw ConfigError("diagnose: quantizer '" + s.id + "' has no spec");
  const Tensor &x = calib.inputs;
  const auto fp_trace = run_graph(g, ag::Var(x), ExecMode::FP);
  const Tensor fp_out = fp_trace.output().value();
  const double fp_metric = task_metric(g, fp_out, calib);
  auto row = [&](const Graph &variant) {
    const Tensor out = forward_sim_quant(variant, x);
    const double m = task_metric(variant, out, calib);
    return json{{"metric", m}, {"delta", m - fp_metric}, {"output_mse", output_mse(out, fp_out)}};
  };

  json sanity = row(with_enabled_slots(g, [](const QuantSlot &) { return false; }));
  json wonly = row(with_enabled_slots(g, [](const QuantSlot &s) { return s.kind == SlotKind::Weight; }));
  json aonly = row(with_enabled_slots(g, [](const QuantSlot &s) { return s.kind == SlotKind::Activation; }));
  json full = row(with_enabled_slots(g, [](const QuantSlot &) { return true; }));

  struct SweepRow
  {
    std::size_t slot;
    json data;
  };
  std::vector<SweepRow> rows;
  for (std::size_t s = 0; s < g.slots.size(); ++s)
  {
    const std::string id = g.slots[s].id;
    json r = row(with_enabled_slots(g, [&](const QuantSlot &q) { return q.id == id; }));
    r["quantizer"] = id;
    r["kind"] = g.slots[s].kind == SlotKind::Weight ? "weight" : "activation";
    r["bitwidth"] = g.slots[s].bitwidth;
    rows.push_back({s, r});
  }
  // Rank by the output error each quantizer causes alone; ties keep graph order.
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow &a, const SweepRow &b) {
    return a.data["output_mse"].get<double>() > b.data["output_mse"].get<double>();
  });
  json sweep = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i)
  {
    rows[i].data["rank"] = i + 1;
    sweep.push_back(rows[i].data);
  }

  // Per-channel data for the worst quantizers and for imbalanced weights.
  const Placement p = placement(g);
  std::vector<bool> flagged(g.slots.size(), false);
  for (std::size_t i = 0; i < std::min(kFlaggedTop, rows.size()); ++i)
    flagged[rows[i].slot] = true;
  json spreads = json::array();
  json recommendations = json::array();
  std::vector<std::string> imbalanced, depthwise_imbalanced;
  for (std::size_t k = 0; k < g.layers.size(); ++k)
  {
    const int ws = p.weight_slot[k];
    if (ws < 0)
      continue;
    const double spread = channel_range_spread(g.layers[k].weight);
    spreads.push_back({{"layer", g.layers[k].name}, {"channel_range_spread", spread}});
    if (spread > kSpreadThreshold)
    {
      flagged[static_cast<std::size_t>(ws)] = true;
      imbalanced.push_back(g.layers[k].name);
      if (g.layers[k].kind == LayerKind::DepthwiseConv2d)
        depthwise_imbalanced.push_back(g.layers[k].name);
    }
  }
  json channels = json::array();
  for (std::size_t s = 0; s < g.slots.size(); ++s)
  {
    if (!flagged[s])
      continue;
    json per = json::array();
    if (g.slots[s].kind == SlotKind::Weight)
    {
      const auto k = static_cast<std::size_t>(std::find(p.weight_slot.begin(), p.weight_slot.end(), static_cast<int>(s)) -
                                              p.weight_slot.begin());
      for (auto &ch : split_channels(g.layers[k].weight, 0))
        per.push_back(five_number_summary(std::move(ch)));
    }
    else
    {
      std::vector<std::vector<double>> acc;
      for (auto v : p.sites[s])
      {
        const Tensor &t = fp_trace.raw[v].value();
        auto parts = t.rank() >= 2 ? split_channels(t, 1) : std::vector<std::vector<double>>{t.vec()};
        if (acc.size() < parts.size())
          acc.resize(parts.size());
        for (std::size_t c = 0; c < parts.size(); ++c)
          acc[c].insert(acc[c].end(), parts[c].begin(), parts[c].end());
      }
      for (auto &ch : acc)
        per.push_back(five_number_summary(std::move(ch)));
    }
    channels.push_back({{"quantizer", g.slots[s].id}, {"channels", per}});
  }

  const double w_err = wonly["output_mse"].get<double>(), a_err = aonly["output_mse"].get<double>();
  auto recommend = [&](std::string action, json target, std::string reason) {
    recommendations.push_back({{"rank", recommendations.size() + 1},
                               {"action", std::move(action)},
                               {"target", std::move(target)},
                               {"reason", std::move(reason)}});
  };
  if (!depthwise_imbalanced.empty())
    recommend("cross_layer_equalization", depthwise_imbalanced,
              "per-channel weight ranges of depthwise layers differ by more than " +
                  std::to_string(static_cast<int>(kSpreadThreshold)) + "x");
  if (!imbalanced.empty())
  {
    if (depthwise_imbalanced.empty())
      recommend("cross_layer_equalization", imbalanced, "per-channel weight ranges are imbalanced");
    recommend("per_channel_weights", imbalanced, "per-channel quantization removes the inter-channel range spread");
  }
  if (w_err >= a_err)
  {
    recommend("bias_correction", nullptr, "weight quantization dominates the output error");
    recommend("adaround", nullptr, "weight rounding can be optimized with calibration data");
  }
  else
    recommend("activation_range_setting", nullptr, "activation quantization dominates; use MSE-based ranges");
  if (!rows.empty())
    recommend("higher_bit_exception", rows.front().data["quantizer"],
              "largest single-quantizer output error; keep it at higher precision or refit its range");

  return json{{"command", "diagnose"},
              {"metric_name", metric_name(g)},
              {"fitted_quantizers", fitted_here},
              {"fp32_metric", fp_metric},
              {"fp32_sanity", sanity},
              {"weights_only", wonly},
              {"activations_only", aonly},
              {"full", full},
              {"sweep", sweep},
              {"weight_channel_spread", spreads},
              {"per_channel", channels},
              {"recommendations", recommendations}};
}

// ---- eval -------------------------------------------------------------------------

enum class Engine
{
  FP,
  Sim,
  Int,
};

inline Engine engine_from_string(std::string_view s)
{
  if (s == "fp")
    return Engine::FP;
  if (s == "sim")
    return Engine::Sim;
  if (s == "int")
    return Engine::Int;
  throw ConfigError("unknown engine '" + std::string(s) + "' (fp, sim, int)");
}

inline std::string_view to_string(Engine e) { return e == Engine::FP ? "fp" : e == Engine::Sim ? "sim" : "int"; }

/// Stored weights lose precision, so frozen biases are moved back onto their grids.
inline Graph prepare_loaded(const LoadedModel &m)
{
  return m.flags.frozen ? freeze_for_integer(m.graph) : m.graph;
}

struct EvalResult
{
  Tensor outputs;
  json metrics;
};

inline EvalResult run_eval(const LoadedModel &model, const Dataset &data, Engine engine)
{
  const Graph g = prepare_loaded(model);
  if (engine != Engine::FP && !g.quantized())
    throw ConfigError("engine '" + std::string(to_string(engine)) + "' needs a quantized model");
  if (engine == Engine::Int && !model.flags.frozen)
    throw ConfigError("engine 'int' needs frozen quantizers; export the model with ptq or qat first");
  EvalResult r;
  switch (engine)
  {
    case Engine::FP:
      r.outputs = forward_fp(g, data.inputs);
      break;
    case Engine::Sim:
      r.outputs = forward_sim_quant(g, data.inputs);
      break;
    case Engine::Int:
      r.outputs = run_int_graph(g, data.inputs);
      break;
  }
  r.metrics = json{{"command", "eval"}, {"engine", to_string(engine)}, {"samples", data.size()}};
  if (data.labels)
    r.metrics[std::string(metric_name(g))] = task_metric(g, r.outputs, data);
  return r;
}

} // namespace quantkit

#endif // QUANTKIT_PIPELINES_HPP
