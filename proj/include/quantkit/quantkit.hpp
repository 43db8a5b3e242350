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

#ifndef QUANTKIT_QUANTKIT_HPP
#define QUANTKIT_QUANTKIT_HPP

#include "quantkit/adaround.hpp"
#include "quantkit/autograd.hpp"
#include "quantkit/calibration.hpp"
#include "quantkit/datasets.hpp"
#include "quantkit/error.hpp"
#include "quantkit/executor.hpp"
#include "quantkit/graph.hpp"
#include "quantkit/int_executor.hpp"
#include "quantkit/metrics.hpp"
#include "quantkit/models.hpp"
#include "quantkit/pipelines.hpp"
#include "quantkit/ptq_transforms.hpp"
#include "quantkit/qat.hpp"
#include "quantkit/quantizer.hpp"
#include "quantkit/range_setting.hpp"
#include "quantkit/serialization.hpp"
#include "quantkit/tensor.hpp"

#endif // QUANTKIT_QUANTKIT_HPP
