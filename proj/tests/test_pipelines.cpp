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

#include "quantkit/pipelines.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace quantkit;

namespace
{

const models::Task &moons()
{
  static const models::Task t = models::make_task("two_moons", 3);
  return t;
}

PipelineConfig fast_config()
{
  PipelineConfig c;
  c.adaround_cfg.iterations = 100;
  c.qat.epochs = 2;
  return c;
}

std::vector<std::string> step_names(const json &steps)
{
  std::vector<std::string> r;
  for (const auto &s : steps)
    r.push_back(s["step"].get<std::string>());
  return r;
}

json step(const json &report, std::string_view name)
{
  for (const auto &s : report["steps"])
    if (s["step"] == name)
      return s;
  return nullptr;
}

} // namespace

TEST(Ptq, steps_in_order_with_resolved_defaults)
{
  const auto &t = moons();
  const auto r = run_ptq(t.model, &t.calib, &t.test, fast_config());
  const auto names = step_names(r.report["steps"]);
  ASSERT_EQ(names.size(), kPtqSteps.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    EXPECT_EQ(names[i], kPtqSteps[i]);
  const auto &res = r.report["resolved"];
  EXPECT_EQ(res["adaround"], true);
  EXPECT_EQ(res["bias_correction"], to_string(BiasCorrMode::Off));
  EXPECT_EQ(res["act_range"], to_string(ActRangeMethod::XentLast));
  EXPECT_EQ(r.report["data_free"], false);
  EXPECT_FALSE(has_batchnorm(r.graph));
  EXPECT_EQ(step(r.report, "preprocess")["folded_batchnorm"].size(), 2u);
  const auto &m = r.report["metrics"];
  EXPECT_NEAR(m["quantized"].get<double>(), m["fp32"].get<double>(), 0.03);
  EXPECT_DOUBLE_EQ(m["delta"].get<double>(), m["quantized"].get<double>() - m["fp32"].get<double>());
}

TEST(Ptq, data_free_branch)
{
  const auto &t = moons();
  const auto r = run_ptq(t.model, nullptr, &t.test, fast_config());
  EXPECT_EQ(r.report["data_free"], true);
  EXPECT_EQ(step(r.report, "adaround")["status"], "skipped");
  EXPECT_EQ(step(r.report, "adaround")["reason"], "no calibration data");
  EXPECT_EQ(r.report["resolved"]["bias_correction"], to_string(BiasCorrMode::Analytic));
  EXPECT_EQ(r.report["resolved"]["act_range"], to_string(ActRangeMethod::BN));
  EXPECT_EQ(step(r.report, "bias_correction")["status"], "done");
  EXPECT_GT(r.report["metrics"]["quantized"].get<double>(), 0.8);
}

TEST(Ptq, data_free_rejects_data_methods)
{
  const auto &t = moons();
  PipelineConfig c = fast_config();
  c.act_range = ActRangeMethod::MSE;
  EXPECT_THROW(run_ptq(t.model, nullptr, nullptr, c), ConfigError);
  c = fast_config();
  c.adaround = true;
  EXPECT_THROW(run_ptq(t.model, nullptr, nullptr, c), ConfigError);
  c = fast_config();
  c.bias_corr = BiasCorrMode::Empirical;
  EXPECT_THROW(run_ptq(t.model, nullptr, nullptr, c), ConfigError);
  Graph no_stats = t.model;
  no_stats.input_mean.clear();
  no_stats.input_std.clear();
  EXPECT_THROW(run_ptq(no_stats, nullptr, nullptr, fast_config()), ConfigError);
}

TEST(Ptq, deterministic_for_a_seed)
{
  const auto &t = moons();
  PipelineConfig c = fast_config();
  c.seed = 11;
  const auto a = run_ptq(t.model, &t.calib, &t.test, c), b = run_ptq(t.model, &t.calib, &t.test, c);
  EXPECT_EQ(a.report, b.report);
  for (std::size_t k = 0; k < a.graph.layers.size(); ++k)
    EXPECT_EQ(a.graph.layers[k].weight.vec(), b.graph.layers[k].weight.vec());
}

TEST(Ptq, output_runs_on_the_integer_engine)
{
  const auto &t = moons();
  PipelineConfig c = fast_config();
  c.adaround = false;
  const auto r = run_ptq(t.model, &t.calib, nullptr, c);
  EXPECT_EQ(r.report["metrics"]["quantized"], nullptr);
  EXPECT_EQ(r.report["resolved"]["bias_correction"], to_string(BiasCorrMode::Empirical));
  EXPECT_EQ(forward_sim_quant(r.graph, t.test.inputs).vec(), run_int_graph(r.graph, t.test.inputs).vec());
}

TEST(Ptq, empty_calibration_rejected)
{
  const Dataset empty{};
  EXPECT_THROW(run_ptq(moons().model, &empty, nullptr, fast_config()), ConfigError);
}

TEST(Qat, steps_history_and_errors)
{
  const auto &t = moons();
  PipelineConfig c = fast_config();
  c.quant.weight_bits = 4;
  c.quant.act_bits = 4;
  std::ostringstream lines;
  const auto r = run_qat(t.model, t.train, c, &lines);
  const auto names = step_names(r.report["steps"]);
  ASSERT_EQ(names.size(), kQatSteps.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    EXPECT_EQ(names[i], kQatSteps[i]);
  EXPECT_EQ(r.history.size(), 3u);
  std::size_t n = 0;
  std::istringstream in(lines.str());
  for (std::string line; std::getline(in, line);)
    n += !json::parse(line).is_null();
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(forward_sim_quant(r.graph, t.test.inputs).vec(), run_int_graph(r.graph, t.test.inputs).vec());

  Dataset unlabelled{t.train.inputs, std::nullopt};
  EXPECT_THROW(run_qat(t.model, unlabelled, c), ConfigError);
  c.qat.bn = BnHandling::KeepBnPerChannel;
  EXPECT_THROW(run_qat(t.model, t.train, c), ConfigError);
  c.quant.weight_granularity = Granularity::PerChannel;
  c.qat.epochs = 1;
  const auto kept = run_qat(t.model, t.train, c);
  EXPECT_FALSE(has_batchnorm(kept.graph));
  EXPECT_EQ(step(kept.report, "cross_layer_equalization")["status"], "skipped");
}

TEST(Config, json_overlay)
{
  PipelineConfig c;
  apply_config_json(c, json::parse(R"({"weight_bits": 4, "act_range": "mse", "adaround_config": {"iterations": 7},
                                       "qat": {"optimizer": "sgd", "cosine_decay": false}})"));
  EXPECT_EQ(c.quant.weight_bits, 4);
  EXPECT_EQ(c.act_range, ActRangeMethod::MSE);
  EXPECT_EQ(c.adaround_cfg.iterations, 7);
  EXPECT_EQ(c.qat.optimizer, Optimizer::SGD);
  EXPECT_FALSE(c.qat.cosine_decay);
  EXPECT_THROW(apply_config_json(c, json::parse(R"({"bogus": 1})")), ConfigError);
  EXPECT_THROW(apply_config_json(c, json::parse(R"({"qat": {"bogus": 1}})")), ConfigError);
  EXPECT_THROW(apply_config_json(c, json::parse(R"({"weight_bits": "four"})")), ConfigError);
  EXPECT_THROW(apply_config_json(c, json::parse("[]")), ConfigError);
  EXPECT_THROW(bias_corr_from_string("sometimes"), ConfigError);
}

TEST(Eval, engines)
{
  const auto &t = moons();
  const auto ptq = run_ptq(t.model, &t.calib, nullptr, fast_config());
  const LoadedModel frozen{ptq.graph, {true}}, fp{t.model, {false}};
  const auto s = run_eval(frozen, t.test, Engine::Sim), i = run_eval(frozen, t.test, Engine::Int);
  EXPECT_EQ(s.outputs.vec(), i.outputs.vec());
  EXPECT_EQ(s.metrics["accuracy"], i.metrics["accuracy"]);
  EXPECT_EQ(i.metrics["samples"], t.test.size());
  EXPECT_NO_THROW(run_eval(fp, t.test, Engine::FP));
  EXPECT_THROW(run_eval(fp, t.test, Engine::Sim), ConfigError);
  EXPECT_THROW(run_eval(LoadedModel{ptq.graph, {false}}, t.test, Engine::Int), ConfigError);
  EXPECT_THROW(engine_from_string("gpu"), ConfigError);
  EXPECT_EQ(engine_from_string(to_string(Engine::Int)), Engine::Int);
  const Dataset unlabelled{t.test.inputs, std::nullopt};
  EXPECT_FALSE(run_eval(frozen, unlabelled, Engine::Sim).metrics.contains("accuracy"));
}

TEST(Diagnose, report_shape)
{
  const auto &t = moons();
  PipelineConfig c;
  c.quant.weight_bits = 4;
  const json r = run_diagnose(t.model, t.calib, c);
  EXPECT_EQ(r["fitted_quantizers"], true);
  for (const char *k : {"weights_only", "activations_only", "full", "sweep", "recommendations"})
    EXPECT_TRUE(r.contains(k)) << k;
  EXPECT_FALSE(r["sweep"].empty());
  EXPECT_THROW(run_diagnose(t.model, Dataset{t.calib.inputs, std::nullopt}, c), ConfigError);
}

TEST(Summary, five_numbers)
{
  const json s = five_number_summary({5.0, 1.0, 3.0, 2.0, 4.0});
  EXPECT_EQ(s["min"], 1.0);
  EXPECT_EQ(s["q1"], 2.0);
  EXPECT_EQ(s["median"], 3.0);
  EXPECT_EQ(s["q3"], 4.0);
  EXPECT_EQ(s["max"], 5.0);
  EXPECT_EQ(five_number_summary({}), nullptr);
  EXPECT_DOUBLE_EQ(channel_range_spread(Tensor({2, 2}, {1.0, -0.5, 0.1, 0.05})), 10.0);
}
