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

#ifndef QUANTKIT_ERROR_HPP
#define QUANTKIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace quantkit
{

/// Base of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error
{
public:
  using Error::Error;
};

/// Tensor shapes do not agree.
class DimensionError : public Error
{
public:
  using Error::Error;
};

/// Invalid or incomplete user configuration (CLI exit code 2).
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// NaN/Inf or divergence during optimization (CLI exit code 3).
class NumericalError : public Error
{
public:
  using Error::Error;
};

/// 32-bit accumulator overflow in the integer executor.
class OverflowError : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

/// Malformed model / dataset files.
class ParseError : public Error
{
public:
  using Error::Error;
};

} // namespace quantkit

#endif // QUANTKIT_ERROR_HPP
