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

#ifndef QUANTKIT_DATASETS_HPP
#define QUANTKIT_DATASETS_HPP

#include "quantkit/error.hpp"
#include "quantkit/serialization.hpp"
#include "quantkit/tensor.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

// Desk-scale synthetic datasets. Every generator is a pure function of its seed.

namespace quantkit::data
{

/// Two interleaved half circles in 2-D, labels 0/1 alternating.
inline Dataset two_moons(std::size_t n, double noise, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> t(0.0, std::numbers::pi);
  std::normal_distribution<double> eps(0.0, noise);
  Tensor x({n, 2}), y({n});
  for (std::size_t i = 0; i < n; ++i)
  {
    const double a = t(rng);
    const bool inner = i % 2 == 1;
    x[2 * i] = (inner ? 1.0 - std::cos(a) : std::cos(a)) + eps(rng);
    x[2 * i + 1] = (inner ? 0.5 - std::sin(a) : std::sin(a)) + eps(rng);
    y[i] = inner ? 1.0 : 0.0;
  }
  return {std::move(x), std::move(y)};
}

/// Isotropic Gaussian blobs. Centers come from `problem_seed`, so splits drawn with
/// different sample seeds share one problem.
inline Dataset gaussians(std::size_t n, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed,
                         std::uint64_t problem_seed = 0)
{
  if (classes < 2 || dim == 0)
    throw ConfigError("gaussians needs at least two classes and one dimension");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> centers(classes * dim);
  std::mt19937_64 crng(problem_seed);
  for (auto &c : centers)
    c = 2.0 * unit(crng);
  std::mt19937_64 rng(seed);
  Tensor x({n, dim}), y({n});
  for (std::size_t i = 0; i < n; ++i)
  {
    const std::size_t c = i % classes;
    for (std::size_t d = 0; d < dim; ++d)
      x[i * dim + d] = centers[c * dim + d] + spread * unit(rng);
    y[i] = static_cast<double>(c);
  }
  return {std::move(x), std::move(y)};
}

namespace detail
{

// 8x8 glyphs of the ten digits.
inline constexpr std::array<std::string_view, 10> kGlyphs{
    "..####..""..#..#..""..#..#..""..#..#..""..#..#..""..#..#..""..####..""........",
    "...##...""..###...""...##...""...##...""...##...""...##...""..####..""........",
    "..####..""......#.""......#.""..####..""..#.....""..#.....""..####..""........",
    "..####..""......#.""......#.""...###..""......#.""......#.""..####..""........",
    "..#..#..""..#..#..""..#..#..""..####.."".....#.."".....#.."".....#..""........",
    "..####..""..#.....""..#.....""..####..""......#.""......#.""..####..""........",
    "..####..""..#.....""..#.....""..####..""..#..#..""..#..#..""..####..""........",
    "..#####.""......#."".....#..""....#...""...#....""...#....""...#....""........",
    "..####..""..#..#..""..#..#..""..####..""..#..#..""..#..#..""..####..""........",
    "..####..""..#..#..""..#..#..""..####.."".....#.."".....#..""..####..""........",
};

} // namespace detail

/// Noisy, randomly shifted 8x8 digit images [N,1,8,8] with intensities in about [0,1].
inline Dataset digits(std::size_t n, double noise, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, noise);
  std::uniform_int_distribution<int> shift(-1, 1);
  std::uniform_real_distribution<double> ink(0.6, 1.0);
  Tensor x({n, 1, 8, 8}), y({n});
  for (std::size_t i = 0; i < n; ++i)
  {
    const std::size_t c = i % 10;
    const int dy = shift(rng), dx = shift(rng);
    const double level = ink(rng);
    for (int r = 0; r < 8; ++r)
      for (int col = 0; col < 8; ++col)
      {
        const int sr = r - dy, sc = col - dx;
        const bool on = sr >= 0 && sr < 8 && sc >= 0 && sc < 8 && detail::kGlyphs[c][static_cast<std::size_t>(sr * 8 + sc)] == '#';
        x[i * 64 + static_cast<std::size_t>(r * 8 + col)] = (on ? level : 0.0) + eps(rng);
      }
    y[i] = static_cast<double>(c);
  }
  return {std::move(x), std::move(y)};
}

/// Dataset by generator name: "two_moons", "gaussians" or "digits".
inline Dataset by_name(std::string_view name, std::size_t n, std::uint64_t seed, std::uint64_t problem_seed = 0)
{
  if (name == "two_moons")
    return two_moons(n, 0.1, seed);
  if (name == "gaussians")
    return gaussians(n, 4, 8, 1.0, seed, problem_seed);
  if (name == "digits")
    return digits(n, 0.15, seed);
  throw ConfigError("unknown dataset generator '" + std::string(name) + "'");
}

} // namespace quantkit::data

#endif // QUANTKIT_DATASETS_HPP
