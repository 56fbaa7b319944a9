/*
 * Copyright (c) 2026, The rsfme Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "rsfme/ops.hpp"

namespace rsfme {

enum class Mode { kTrain, kInfer };

/// State shared by every layer during one forward pass.
template <typename Scalar>
struct Context {
  Tape<Scalar>& tape;
  Mode mode = Mode::kInfer;
  std::mt19937_64* rng = nullptr;  // dropout source; required in kTrain

  bool training() const { return mode == Mode::kTrain; }
  Var<Scalar> param(Parameter<Scalar>& p) const { return tape.parameter(p); }
};

using Rng = std::mt19937_64;

/// Stateless seed derivation for independent streams: splitmix64 chained
/// over (seed, a, b).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Normal(0, std) resampled until |x| <= 2 std.
template <typename Scalar>
Tensor<Scalar> truncated_normal(Shape shape, double std, Rng& rng);

/// Normal(0, sqrt(2 / fan_in)).
template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, Rng& rng);

/// y = x W + b with W [in, out]. Applies to the last axis of a 2-D input.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<Scalar>& store, const std::string& name, Index in, Index out, Rng& rng,
         bool bias = true);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x) const;

  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;
};

/// Per-token normalization over the last axis with learnable scale/shift.
template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<Scalar>& store, const std::string& name, Index dim, double eps = 1e-5);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x) const;

  Parameter<Scalar>* gamma = nullptr;
  Parameter<Scalar>* beta = nullptr;
  double eps = 1e-5;
};

/// Batch normalization over axis 1. Running statistics follow an
/// exponential moving average with `momentum` and are stored as buffers.
template <typename Scalar>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore<Scalar>& store, const std::string& name, Index channels,
            double eps = 1e-5, double momentum = 0.1);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x);

  Parameter<Scalar>* gamma = nullptr;
  Parameter<Scalar>* beta = nullptr;
  Parameter<Scalar>* running_mean = nullptr;
  Parameter<Scalar>* running_var = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<Scalar>& store, const std::string& name, const ConvSpec& spec, Rng& rng,
         bool bias = true);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x) const;

  ConvSpec spec;
  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;
};

}  // namespace rsfme
