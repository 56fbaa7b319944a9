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

#include <doctest.h>

#include <set>

#include "rsfme/gradient_suite.hpp"

using namespace rsfme;

TEST_CASE("gradient suite covers every op and block and passes") {
  std::set<std::string> names;
  for (const auto& r : run_gradient_suite()) {
    INFO(r.name << " err " << r.max_relative_error << " tol " << r.tolerance << " checked " << r.checked
                << " kinks " << r.kinks);
    CHECK(r.passed());
    names.insert(r.name);
  }
  for (const char* required : {"add", "matmul", "softmax", "layer_norm", "batch_norm", "conv2d", "pool2d_max",
                               "pool2d_avg", "scaled_attention", "grouped_attention", "cross_entropy", "mha_block",
                               "irb", "transformer_block", "residual_block", "spatial_block", "rs-fme-swint(tiny)"}) {
    CHECK(names.count(required) == 1);
  }
}
