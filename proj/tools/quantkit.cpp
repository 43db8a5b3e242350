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

// quantkit command-line front end: ptq, qat, diagnose, eval, generate.

#include "quantkit/quantkit.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace quantkit;

namespace
{

enum ExitCode
{
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kNumericalError = 3,
};

/// Flags shared by ptq, qat and diagnose; unset flags keep the defaults.
struct CommonFlags
{
  std::string model, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> wbits, abits;
  bool per_channel = false;
  std::optional<std::string> act_range, weight_range;

  void add(CLI::App *app)
  {
    app->add_option("--model", model, "float or quantized model manifest")->required();
    app->add_option("--config", config, "JSON config; its keys override flags");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--wbits", wbits, "weight bit-width");
    app->add_option("--abits", abits, "activation bit-width");
    app->add_flag("--per-channel", per_channel, "per-channel weight quantization");
    app->add_option("--act-range", act_range, "mse | minmax | bn | xent-last");
    app->add_option("--weight-range", weight_range, "mse | minmax");
  }

  void apply(PipelineConfig &cfg) const
  {
    if (seed)
      cfg.seed = *seed;
    if (wbits)
      cfg.quant.weight_bits = *wbits;
    if (abits)
      cfg.quant.act_bits = *abits;
    if (per_channel)
      cfg.quant.weight_granularity = Granularity::PerChannel;
    if (act_range)
      cfg.act_range = act_range_from_string(*act_range);
    if (weight_range)
      cfg.weight_range = weight_range_from_string(*weight_range);
  }
};

PipelineConfig resolve_config(const CommonFlags &f, const std::function<void(PipelineConfig &)> &extra = {})
{
  PipelineConfig cfg;
  f.apply(cfg);
  if (extra)
    extra(cfg);
  if (!f.config.empty())
  {
    try
    {
      apply_config_json(cfg, io::read_json(f.config));
    }
    catch (const ParseError &e)
    {
      throw ConfigError(std::string("config file: ") + e.what());
    }
  }
  return cfg;
}

fs::path sibling(const fs::path &out, const std::string &suffix)
{
  fs::path p = out;
  p.replace_extension(suffix);
  return p;
}

int run_guarded(const std::function<void()> &body)
{
  try
  {
    body();
    return kOk;
  }
  catch (const ConfigError &e)
  {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigError;
  }
  catch (const ParseError &e)
  {
    std::cerr << "input error: " << e.what() << '\n';
    return kFailure;
  }
  catch (const NumericalError &e)
  {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  }
  catch (const std::exception &e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"quantkit: neural network quantization toolkit"};
  app.require_subcommand(1);

  // ptq
  CommonFlags ptq_flags;
  std::string ptq_calib, ptq_data, ptq_report, ptq_bias;
  bool ptq_no_cle = false;
  std::optional<bool> ptq_adaround;
  auto *ptq = app.add_subcommand("ptq", "post-training quantization");
  ptq_flags.add(ptq);
  ptq->add_option("--out", ptq_flags.out, "quantized model manifest")->required();
  ptq->add_option("--calib", ptq_calib, "calibration dataset; omit for the data-free pipeline");
  ptq->add_option("--data", ptq_data, "labelled evaluation dataset for report metrics");
  ptq->add_option("--report", ptq_report, "report path (default: <out> with extension .report.json)");
  ptq->add_option("--bias-corr", ptq_bias, "empirical | analytic | off");
  ptq->add_flag("--no-cle", ptq_no_cle, "skip cross-layer equalization");
  ptq->add_flag("--adaround,!--no-adaround", ptq_adaround, "enable or disable AdaRound");

  // qat
  CommonFlags qat_flags;
  std::string qat_data, qat_report;
  std::optional<int> qat_epochs;
  bool qat_no_cle = false;
  auto *qat = app.add_subcommand("qat", "quantization-aware training");
  qat_flags.add(qat);
  qat->add_option("--out", qat_flags.out, "quantized model manifest")->required();
  qat->add_option("--data", qat_data, "labelled training dataset")->required();
  qat->add_option("--report", qat_report, "report path (default: <out> with extension .report.json)");
  qat->add_option("--epochs", qat_epochs, "training epochs");
  qat->add_flag("--no-cle", qat_no_cle, "skip cross-layer equalization");

  // diagnose
  CommonFlags diag_flags;
  std::string diag_calib;
  auto *diag = app.add_subcommand("diagnose", "quantization debugging report");
  diag_flags.add(diag);
  diag->add_option("--calib", diag_calib, "labelled calibration dataset")->required();
  diag->add_option("--out", diag_flags.out, "report path (default: stdout)");

  // eval
  std::string eval_model, eval_data, eval_engine = "sim", eval_out;
  auto *eval = app.add_subcommand("eval", "evaluate a model");
  eval->add_option("--model", eval_model, "model manifest")->required();
  eval->add_option("--data", eval_data, "dataset")->required();
  eval->add_option("--engine", eval_engine, "fp | sim | int")->capture_default_str();
  eval->add_option("--out", eval_out, "metrics path (default: stdout)");

  // generate
  std::string gen_task = "two_moons", gen_dir;
  std::uint64_t gen_seed = 0;
  auto *gen = app.add_subcommand("generate", "train a toy float model and write its datasets");
  gen->add_option("--task", gen_task, "two_moons | gaussians | digits")->capture_default_str();
  gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
  gen->add_option("--out", gen_dir, "output directory")->required();

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError &e)
  {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (ptq->parsed())
    return run_guarded([&] {
      const PipelineConfig cfg = resolve_config(ptq_flags, [&](PipelineConfig &c) {
        if (!ptq_bias.empty())
          c.bias_corr = bias_corr_from_string(ptq_bias);
        if (ptq_no_cle)
          c.cle = false;
        if (ptq_adaround)
          c.adaround = *ptq_adaround;
      });
      const Graph model = load_model(ptq_flags.model);
      std::optional<Dataset> calib, data;
      if (!ptq_calib.empty())
        calib = load_dataset(ptq_calib);
      if (!ptq_data.empty())
        data = load_dataset(ptq_data);
      const PtqResult r = run_ptq(model, calib ? &*calib : nullptr, data ? &*data : nullptr, cfg);
      save_model(r.graph, ptq_flags.out, ModelFlags{true});
      const fs::path report = ptq_report.empty() ? sibling(ptq_flags.out, ".report.json") : fs::path(ptq_report);
      io::write_json(report, r.report);
      std::cout << "wrote " << ptq_flags.out << " and " << report.string() << '\n';
    });

  if (qat->parsed())
    return run_guarded([&] {
      const PipelineConfig cfg = resolve_config(qat_flags, [&](PipelineConfig &c) {
        if (qat_epochs)
          c.qat.epochs = *qat_epochs;
        if (qat_no_cle)
          c.cle = false;
        if (c.quant.weight_granularity == Granularity::PerChannel)
          c.qat.bn = BnHandling::KeepBnPerChannel;
      });
      const Graph model = load_model(qat_flags.model);
      const Dataset data = load_dataset(qat_data);
      const fs::path metrics_path = sibling(qat_flags.out, ".metrics.jsonl");
      std::ofstream metrics(metrics_path);
      if (!metrics)
        throw ConfigError("cannot write '" + metrics_path.string() + "'");
      const QatResult r = run_qat(model, data, cfg, &metrics);
      save_model(r.graph, qat_flags.out, ModelFlags{true});
      const fs::path report = qat_report.empty() ? sibling(qat_flags.out, ".report.json") : fs::path(qat_report);
      io::write_json(report, r.report);
      std::cout << "wrote " << qat_flags.out << ", " << report.string() << " and " << metrics_path.string() << '\n';
    });

  if (diag->parsed())
    return run_guarded([&] {
      const PipelineConfig cfg = resolve_config(diag_flags);
      const json report = run_diagnose(prepare_loaded(load_model_with_flags(diag_flags.model)),
                                       load_dataset(diag_calib), cfg);
      if (diag_flags.out.empty())
        std::cout << report.dump(2) << '\n';
      else
        io::write_json(diag_flags.out, report);
    });

  if (eval->parsed())
    return run_guarded([&] {
      const EvalResult r = run_eval(load_model_with_flags(eval_model), load_dataset(eval_data),
                                    engine_from_string(eval_engine));
      if (eval_out.empty())
        std::cout << r.metrics.dump(2) << '\n';
      else
        io::write_json(eval_out, r.metrics);
    });

  if (gen->parsed())
    return run_guarded([&] {
      const models::Task t = models::make_task(gen_task, gen_seed);
      fs::create_directories(gen_dir);
      const fs::path dir(gen_dir);
      save_model(t.model, dir / "model.json");
      save_dataset(t.train, dir / "train.json");
      save_dataset(t.calib, dir / "calib.json");
      save_dataset(t.test, dir / "test.json");
      std::cout << "wrote model.json, train.json, calib.json and test.json to " << dir.string() << '\n';
    });

  return kFailure;
}
