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
#include <vector>

#include "rsfme/grad_check.hpp"

namespace rsfme {

struct GradientSuiteOptions {
  double op_tolerance = 1e-4;
  double block_tolerance = 1e-3;
  /// Fraction of the tiny model's parameters probed.
  double model_fraction = 0.01;
  std::uint64_t seed = 0;
};

/// Central-difference checks in double precision for every differentiable op
/// and for the assembled blocks (mha_block, irb, transformer_block,
/// residual_block, spatial_block) plus the tiny rs-fme-swint model. Blocks
/// are checked with respect to both their input and their parameters.
/// `progress` sees each report as soon as it is ready.
std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options = {},
                                                const std::function<void(const GradCheckReport&)>& progress = {});

}  // namespace rsfme
