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
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace quantkit;
using qk_test::random_tensor;

namespace
{

Tensor naive_matmul(const Tensor &a, const Tensor &b)
{
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
    {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t)
        s += a[i * k + t] * b[t * n + j];
      out[i * n + j] = s;
    }
  return out;
}

// im2col + matmul reference for a dense (non-depthwise) convolution.
Tensor im2col_conv(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride, std::size_t pad)
{
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t rows = c * kh * kw;
  Tensor out({n, k, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
  {
    Tensor cols({rows, oh * ow});
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
            {
              const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              double val = 0.0;
              if (y >= 0 && xx >= 0 && y < static_cast<long>(h) && xx < static_cast<long>(wd))
                val = x[((s * c + ci) * h + static_cast<std::size_t>(y)) * wd + static_cast<std::size_t>(xx)];
              cols[((ci * kh + u) * kw + v) * oh * ow + i * ow + j] = val;
            }
    const Tensor prod = naive_matmul(w.reshaped({k, rows}), cols);
    for (std::size_t o = 0; o < k; ++o)
      for (std::size_t p = 0; p < oh * ow; ++p)
        out[(s * k + o) * oh * ow + p] = prod[o * oh * ow + p] + b[o];
  }
  return out;
}

void expect_near_all(const Tensor &a, const Tensor &b, double tol)
{
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

// Central differences of a scalar function of several tensors.
void check_gradients(std::vector<Tensor> params, const std::function<ag::Var(const std::vector<ag::Var> &)> &f)
{
  std::vector<ag::Var> vars;
  for (const auto &p : params)
    vars.push_back(ag::Var::parameter(p));
  ag::backward(f(vars));
  const double h = 1e-5;
  for (std::size_t k = 0; k < params.size(); ++k)
  {
    const Tensor analytic = vars[k].grad();
    for (std::size_t i = 0; i < params[k].numel(); ++i)
    {
      auto eval = [&](double delta) {
        std::vector<ag::Var> vs;
        for (std::size_t j = 0; j < params.size(); ++j)
        {
          Tensor t = params[j];
          if (j == k)
            t[i] += delta;
          vs.emplace_back(std::move(t));
        }
        return f(vs).value().item();
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      EXPECT_LE(std::abs(fd - analytic[i]), 1e-4 * std::max({std::abs(fd), std::abs(analytic[i]), 1e-2}))
          << "param " << k << " element " << i << ": fd " << fd << " analytic " << analytic[i];
    }
  }
}

} // namespace

TEST(Tensor, rejects_zero_dimension_and_bad_length)
{
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from_external({1}, {std::nan("")}), ContractError);
}

TEST(Matmul, identity)
{
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(ops::matmul(eye, b), b);
}

TEST(Matmul, hand_expansion)
{
  const Tensor out = ops::matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(out, Tensor({1, 1}, {11}));
}

TEST(Matmul, matches_triple_loop)
{
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  expect_near_all(ops::matmul(a, b), naive_matmul(a, b), 1e-12);
}

TEST(Matmul, shape_mismatch)
{
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Conv2d, identity_kernel)
{
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({2, 1, 4, 4}, rng);
  const Tensor out = ops::conv2d(x, Tensor({1, 1, 1, 1}, {1.0}), Tensor({1}), 1, 0);
  EXPECT_EQ(out, x);
}

TEST(Conv2d, all_ones_sum)
{
  const Tensor out = ops::conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), 1, 0);
  EXPECT_EQ(out, Tensor({1, 1, 1, 1}, {9.0}));
}

TEST(Conv2d, matches_im2col)
{
  std::mt19937_64 rng(3);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}})
  {
    const Tensor x = random_tensor({2, 3, 5, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    expect_near_all(ops::conv2d(x, w, b, stride, pad), im2col_conv(x, w, b, stride, pad), 1e-12);
  }
}

TEST(Conv2d, depthwise_matches_per_channel_dense)
{
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 3, 4, 4}, rng), w = random_tensor({3, 1, 3, 3}, rng), b = random_tensor({3}, rng);
  const Tensor out = ops::conv2d(x, w, b, 1, 1, true);
  for (std::size_t c = 0; c < 3; ++c)
  {
    Tensor xc({1, 1, 4, 4}), wc({1, 1, 3, 3});
    for (std::size_t i = 0; i < 16; ++i)
      xc[i] = x[c * 16 + i];
    for (std::size_t i = 0; i < 9; ++i)
      wc[i] = w[c * 9 + i];
    const Tensor ref = im2col_conv(xc, wc, Tensor({1}, {b[c]}), 1, 1);
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_NEAR(out[c * 16 + i], ref[i], 1e-12);
  }
}

TEST(Conv2d, non_divisible_stride)
{
  EXPECT_THROW(ops::conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 2, 0), DimensionError);
}

TEST(Backward, sum_gives_ones)
{
  const auto x = ag::Var::parameter(Tensor({2, 3}, 0.7));
  ag::backward(ag::sum(x));
  EXPECT_EQ(x.grad(), Tensor({2, 3}, 1.0));
}

TEST(Backward, sum_of_squares)
{
  const auto x = ag::Var::parameter(Tensor({2}, {1, -2}));
  ag::backward(ag::sum(ag::square(x)));
  EXPECT_EQ(x.grad(), Tensor({2}, {2, -4}));
}

TEST(Backward, non_scalar_loss)
{
  const auto x = ag::Var::parameter(Tensor({2}, 1.0));
  EXPECT_THROW(ag::backward(x), ContractError);
}

TEST(Backward, shared_subexpression_accumulates)
{
  const auto x = ag::Var::parameter(Tensor({1}, {3.0}));
  const auto y = ag::mul(x, x);
  ag::backward(ag::sum(ag::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, linear_relu_matches_finite_differences)
{
  std::mt19937_64 rng(5);
  check_gradients({random_tensor({4, 3}, rng), random_tensor({5, 3}, rng), random_tensor({5}, rng)},
                  [](const std::vector<ag::Var> &v) {
                    return ag::mean(ag::square(ag::relu(ag::linear(v[0], v[1], v[2]))));
                  });
}

TEST(Backward, conv_pool_matches_finite_differences)
{
  std::mt19937_64 rng(6);
  check_gradients({random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
                  [](const std::vector<ag::Var> &v) {
                    const auto y = ag::conv2d(v[0], v[1], v[2], 1, 1, false);
                    return ag::sum(ag::sigmoid(ag::flatten(ag::avgpool2d(y, 2))));
                  });
}

TEST(Backward, depthwise_maxpool_matches_finite_differences)
{
  std::mt19937_64 rng(7);
  check_gradients({random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 1, 3, 3}, rng), random_tensor({2}, rng)},
                  [](const std::vector<ag::Var> &v) {
                    const auto y = ag::conv2d(v[0], v[1], v[2], 1, 1, true);
                    return ag::mean(ag::square(ag::maxpool2d(y, 2)));
                  });
}

TEST(Backward, batchnorm_concat_xent_matches_finite_differences)
{
  std::mt19937_64 rng(8);
  const Tensor mean({3}, {0.1, -0.2, 0.3}), var({3}, {1.5, 0.5, 2.0});
  check_gradients({random_tensor({4, 3, 1, 1}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
                  [&](const std::vector<ag::Var> &v) {
                    const auto y = ag::flatten(ag::batchnorm(v[0], v[1], v[2], mean, var, 1e-5));
                    const auto z = ag::concat({y, ag::scale(y, 0.5)});
                    return ag::softmax_cross_entropy(z, {0, 5, 2, 3});
                  });
}

TEST(Adam, zero_gradient_leaves_parameters)
{
  Tensor p({3}, {1, 2, 3});
  const Tensor before = p;
  ag::AdamState st;
  Tensor *ps[] = {&p};
  const Tensor gs[] = {Tensor({3})};
  ag::adam_step(ps, gs, st, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.m[0], Tensor({3}));
  EXPECT_EQ(st.v[0], Tensor({3}));
}

TEST(Adam, first_step_has_unit_magnitude)
{
  Tensor p({1}, {0.0});
  ag::AdamState st;
  Tensor *ps[] = {&p};
  const Tensor gs[] = {Tensor({1}, {1.0})};
  ag::adam_step(ps, gs, st, 0.1);
  EXPECT_NEAR(p[0], -0.1, 1e-7);
}

TEST(Adam, converges_on_quadratic)
{
  Tensor w({1}, {0.0});
  ag::AdamState st;
  std::vector<double> dist;
  for (int t = 0; t < 100; ++t)
  {
    Tensor *ps[] = {&w};
    const Tensor gs[] = {Tensor({1}, {2.0 * (w[0] - 3.0)})};
    ag::adam_step(ps, gs, st, 0.1);
    dist.push_back(std::abs(w[0] - 3.0));
  }
  // burn-in: Adam approaches 3 from below with steps of about lr
  for (std::size_t t = 1; t < 25; ++t)
    EXPECT_LT(dist[t], dist[t - 1]) << "step " << t;
  EXPECT_LT(dist.back(), dist.front());
}

TEST(Sgd, plain_update)
{
  Tensor p({2}, {1.0, -1.0});
  Tensor *ps[] = {&p};
  const Tensor gs[] = {Tensor({2}, {0.5, 2.0})};
  ag::sgd_step(ps, gs, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -1.2);
}
