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

#include "quantkit/autograd.hpp"
#include "quantkit/quantizer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace quantkit;

namespace
{

const QuantizerSpec kAsym8 = make_spec(Scheme::AsymmetricUnsigned, 8, 0.01, 0);

QuantizerSpec per_channel(Scheme scheme, int bits, std::vector<double> s, std::vector<std::int64_t> z)
{
  QuantizerSpec q;
  q.scheme = scheme;
  q.bitwidth = bits;
  q.granularity = Granularity::PerChannel;
  q.scale = std::move(s);
  q.zero_point = std::move(z);
  q.validate();
  return q;
}

} // namespace

TEST(Spec, validation)
{
  EXPECT_THROW(make_spec(Scheme::AsymmetricUnsigned, 1, 0.1), ContractError);
  EXPECT_THROW(make_spec(Scheme::AsymmetricUnsigned, 17, 0.1), ContractError);
  EXPECT_THROW(make_spec(Scheme::AsymmetricUnsigned, 8, 0.0), ContractError);
  EXPECT_THROW(make_spec(Scheme::AsymmetricUnsigned, 8, 0.1, 256), ContractError);
  EXPECT_THROW(make_spec(Scheme::SymmetricSigned, 8, 0.1, 3), ContractError);
  EXPECT_THROW(make_spec(Scheme::PowerOfTwoSigned, 8, 0.3), ContractError);
  EXPECT_NO_THROW(make_pot_spec(3, 8));
}

TEST(Spec, scheme_names_round_trip)
{
  for (Scheme s : {Scheme::AsymmetricUnsigned, Scheme::SymmetricSigned, Scheme::SymmetricUnsigned, Scheme::PowerOfTwoSigned})
    EXPECT_EQ(scheme_from_string(to_string(s)), s);
  EXPECT_THROW(scheme_from_string("nope"), ConfigError);
}

TEST(QuantizeInt, real_zero_is_exact)
{
  const auto spec = make_spec(Scheme::AsymmetricUnsigned, 8, 0.37, 0);
  EXPECT_EQ(quantize_int(Tensor({1}, {0.0}), spec).values[0], 0);
  const auto shifted = make_spec(Scheme::AsymmetricUnsigned, 8, 0.37, 91);
  EXPECT_EQ(fake_quant(Tensor({1}, {0.0}), shifted)[0], 0.0);
}

TEST(QuantizeInt, hand_values_with_clipping)
{
  const auto q = quantize_int(Tensor({3}, {-0.05, 0.32, 1.57}), kAsym8);
  EXPECT_EQ(q.values, (std::vector<std::int32_t>{0, 32, 157}));
}

TEST(QuantizeInt, half_even_ties)
{
  const auto spec = make_spec(Scheme::SymmetricSigned, 8, 0.25);
  const auto q = quantize_int(Tensor({4}, {0.375, 0.625, -0.375, -0.625}), spec);
  EXPECT_EQ(q.values, (std::vector<std::int32_t>{2, 2, -2, -2}));
}

TEST(QuantizeInt, decimal_tie_follows_double_arithmetic)
{
  // 0.15/0.1 is 1.4999999999999998 in binary64, so it is not a tie.
  const auto spec = make_spec(Scheme::SymmetricSigned, 8, 0.1);
  ASSERT_LT(0.15 / 0.1, 1.5);
  EXPECT_EQ(quantize_int(Tensor({1}, {0.15}), spec).values[0], 1);
}

TEST(Dequantize, values)
{
  IntTensor at_z{{1}, {64}, 8, false};
  EXPECT_EQ(dequantize(at_z, make_spec(Scheme::AsymmetricUnsigned, 8, 0.3, 64))[0], 0.0);
  IntTensor q{{1}, {157}, 8, false};
  EXPECT_DOUBLE_EQ(dequantize(q, kAsym8)[0], 1.57);
  IntTensor edge{{1}, {-128}, 8, true};
  EXPECT_EQ(dequantize(edge, make_spec(Scheme::SymmetricSigned, 8, 0.5))[0], -64.0);
}

TEST(Dequantize, out_of_grid_integer)
{
  IntTensor q{{1}, {256}, 8, false};
  EXPECT_THROW(dequantize(q, kAsym8), ContractError);
  IntTensor s{{1}, {128}, 8, true};
  EXPECT_THROW(dequantize(s, make_spec(Scheme::SymmetricSigned, 8, 0.5)), ContractError);
}

TEST(FakeQuant, on_grid_is_identity)
{
  std::mt19937_64 rng(1);
  const auto spec = make_spec(Scheme::AsymmetricUnsigned, 6, 0.07, 20);
  Tensor x({50});
  for (auto &v : x.data())
    v = 0.07 * static_cast<double>(qk_test::pick(rng, 0, 63) - 20);
  EXPECT_EQ(fake_quant(x, spec), x);
}

TEST(FakeQuant, clips_to_q_max)
{
  EXPECT_DOUBLE_EQ(fake_quant(Tensor({1}, {10.0}), kAsym8)[0], 2.55);
}

TEST(FakeQuant, idempotent)
{
  std::mt19937_64 rng(2);
  for (Scheme s : {Scheme::AsymmetricUnsigned, Scheme::SymmetricSigned, Scheme::SymmetricUnsigned})
  {
    const auto spec = make_spec(s, 4, 0.13, s == Scheme::AsymmetricUnsigned ? 5 : 0);
    const Tensor once = fake_quant(qk_test::random_tensor({200}, rng), spec);
    EXPECT_EQ(fake_quant(once, spec), once);
  }
}

TEST(FakeQuant, per_channel_groups_along_axis)
{
  const auto spec = per_channel(Scheme::SymmetricSigned, 8, {0.5, 0.1}, {0, 0});
  const Tensor out = fake_quant(Tensor({2, 2}, {0.7, 0.7, 0.7, 0.7}), spec);
  EXPECT_EQ(out, Tensor({2, 2}, {0.5, 0.5, 0.7000000000000001, 0.7000000000000001}));
  EXPECT_THROW(fake_quant(Tensor({3, 2}), spec), DimensionError);
}

TEST(GridLimits, formulas)
{
  const auto a = grid_limits(make_spec(Scheme::AsymmetricUnsigned, 8, 0.1, 0));
  EXPECT_EQ(a.first, 0.0);
  EXPECT_DOUBLE_EQ(a.second, 25.5);
  const auto s = grid_limits(make_spec(Scheme::SymmetricSigned, 8, 1.0));
  EXPECT_EQ(s, std::make_pair(-128.0, 127.0));
  const auto d = grid_limits(make_spec(Scheme::AsymmetricUnsigned, 8, 0.1, 255));
  EXPECT_EQ(d.second, 0.0);
  const auto u = grid_limits(make_spec(Scheme::SymmetricUnsigned, 4, 0.5));
  EXPECT_EQ(u, std::make_pair(0.0, 7.5));
}

TEST(SteInput, inside_passes_outside_blocks)
{
  const auto spec = make_spec(Scheme::SymmetricSigned, 8, 1.0);
  const Tensor x({4}, {0.3, 127.0, 128.0, -129.0});
  const Tensor up({4}, {2.0, 3.0, 4.0, 5.0});
  EXPECT_EQ(ste_grad_input(x, spec, up), Tensor({4}, {2.0, 3.0, 0.0, 0.0}));
}

TEST(SteScale, terms)
{
  const auto spec = make_spec(Scheme::SymmetricSigned, 8, 0.5);
  EXPECT_EQ(ste_grad_scale(Tensor({1}, {1.5}), spec, Tensor({1}, 1.0))[0], 0.0);
  EXPECT_EQ(ste_grad_scale(Tensor({1}, {-1000.0}), spec, Tensor({1}, 1.0))[0], -128.0);
  EXPECT_EQ(ste_grad_scale(Tensor({1}, {1000.0}), spec, Tensor({1}, 1.0))[0], 127.0);
  EXPECT_NEAR(ste_grad_scale(Tensor({1}, {0.6}), spec, Tensor({1}, 2.0))[0], -0.4, 1e-12);
}

TEST(SteZeroPoint, terms)
{
  const auto spec = make_spec(Scheme::AsymmetricUnsigned, 4, 0.25, 4); // grid [-1, 2.75]
  EXPECT_EQ(ste_grad_zero_point(Tensor({2}, {0.1, 2.0}), spec, Tensor({2}, 1.0))[0], 0.0);
  EXPECT_EQ(ste_grad_zero_point(Tensor({1}, {3.0}), spec, Tensor({1}, 1.0))[0], -0.25);
  const Tensor mixed({4}, {-2.0, 0.0, 5.0, 1.0});
  const Tensor up({4}, {1.0, 7.0, 3.0, 9.0});
  EXPECT_DOUBLE_EQ(ste_grad_zero_point(mixed, spec, up)[0], -0.25 * 1.0 + -0.25 * 3.0);
  EXPECT_THROW(ste_grad_zero_point(mixed, make_spec(Scheme::SymmetricSigned, 4, 0.25), up), ContractError);
}

TEST(FakeQuantNode, backward_agrees_with_ste_functions)
{
  std::mt19937_64 rng(3);
  const auto spec = make_spec(Scheme::AsymmetricUnsigned, 4, 0.2, 6);
  const Tensor xv = qk_test::random_tensor({64}, rng, 2.0);
  const Tensor up = qk_test::random_tensor({64}, rng);
  const auto x = ag::Var::parameter(xv);
  const auto s = ag::Var::parameter(Tensor({1}, {0.2}));
  const auto z = ag::Var::parameter(Tensor({1}, {6.0}));
  ag::backward(ag::sum(ag::mul(ag::fake_quant(x, spec, s, z), ag::Var(up))));
  const Tensor gx = ste_grad_input(xv, spec, up);
  for (std::size_t i = 0; i < xv.numel(); ++i)
    EXPECT_DOUBLE_EQ(x.grad()[i], gx[i]);
  EXPECT_NEAR(s.grad()[0], ste_grad_scale(xv, spec, up)[0], 1e-12);
  EXPECT_NEAR(z.grad()[0], ste_grad_zero_point(xv, spec, up)[0], 1e-12);
}

TEST(FakeQuantNode, rejects_bad_learnable_parameters)
{
  const auto sym = make_spec(Scheme::SymmetricSigned, 4, 0.2);
  const ag::Var x(Tensor({2}, 1.0));
  EXPECT_THROW(ag::fake_quant(x, sym, ag::Var(), ag::Var(Tensor({1}, {1.0}))), ContractError);
  EXPECT_THROW(ag::fake_quant(x, sym, ag::Var(Tensor({1}, {-0.1}))), NumericalError);
  EXPECT_THROW(ag::fake_quant(x, sym, ag::Var(Tensor({2}, {0.1, 0.1}))), DimensionError);
}

TEST(Properties, dequantized_values_lie_on_grid_within_limits)
{
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t)
  {
    const auto spec = qk_test::coin(rng)
                          ? make_spec(Scheme::AsymmetricUnsigned, qk_test::pick(rng, 2, 8), 0.05 + 0.01 * t,
                                      qk_test::pick(rng, 0, 3))
                          : make_spec(Scheme::SymmetricSigned, qk_test::pick(rng, 2, 8), 0.05 + 0.01 * t);
    const Tensor x = qk_test::random_tensor({32}, rng, 3.0);
    const Tensor y = fake_quant(x, spec);
    const auto [lo, hi] = grid_limits(spec);
    for (std::size_t i = 0; i < x.numel(); ++i)
    {
      EXPECT_GE(y[i], lo);
      EXPECT_LE(y[i], hi);
      const double k = y[i] / spec.scale[0];
      EXPECT_NEAR(k, std::round(k), 1e-9);
      if (x[i] >= lo && x[i] <= hi)
        EXPECT_LE(std::abs(y[i] - x[i]), spec.scale[0] / 2 + 1e-12);
    }
  }
}
