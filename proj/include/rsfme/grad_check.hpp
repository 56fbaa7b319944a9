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
#include <functional>
#include <string>
#include <vector>

#include "rsfme/layers.hpp"

namespace rsfme {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound on the relative-error denominator.
  double floor = 1e-6;
  /// Fraction of scalars probed (sampled without replacement); 1 probes all.
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  Index checked = 0;
  /// Probes where left and right derivatives disagree; excluded from the max.
  Index kinks = 0;

  bool passed() const { return checked > 0 && max_relative_error < tolerance; }
};

/// Compares analytic derivatives of a scalar function against central
/// differences. `probes[i]` points at the scalar whose derivative is
/// `analytic[i]`; `evaluate` recomputes the function at the current values.
GradCheckReport compare_with_finite_differences(std::string name, std::span<double* const> probes,
                                                std::span<const double> analytic,
                                                const std::function<double()>& evaluate,
                                                const GradCheckOptions& options);

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Checks d fn / d inputs for every (or a sampled subset of) input scalar.
GradCheckReport grad_check(std::string name, const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Checks d loss / d parameter for the trainable parameters of a store.
GradCheckReport grad_check_parameters(std::string name, ParameterStore<double>& params,
                                      const LossFn& loss, const GradCheckOptions& options = {});

/// Adds uniform noise in [-amount, amount]; used to move inputs off kinks.
Tensor<double> jitter(Tensor<double> t, double amount, Rng& rng);

}  // namespace rsfme
