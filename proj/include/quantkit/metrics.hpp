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

#ifndef QUANTKIT_METRICS_HPP
#define QUANTKIT_METRICS_HPP

#include "quantkit/error.hpp"
#include "quantkit/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace quantkit
{

/// Row-wise argmax of [N, C] scores; ties go to the lowest class.
inline std::vector<int> argmax_rows(const Tensor &scores)
{
  if (scores.rank() != 2)
    throw DimensionError("argmax_rows expects [N,C], got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r)
  {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (scores[r * c + j] > scores[r * c + best])
        best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(const Tensor &scores, std::span<const int> labels)
{
  const auto pred = argmax_rows(scores);
  if (pred.size() != labels.size())
    throw DimensionError("accuracy: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(labels.size()) +
                         " labels");
  if (pred.empty())
    throw ContractError("accuracy of an empty batch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline double output_mse(const Tensor &a, const Tensor &b)
{
  require_same_shape(a, b, "output_mse");
  if (a.empty())
    throw ContractError("output_mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

} // namespace quantkit

#endif // QUANTKIT_METRICS_HPP
