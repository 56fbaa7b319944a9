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

#include <optional>
#include <string>
#include <vector>

#include "rsfme/layers.hpp"

namespace rsfme {

struct BranchConfig {
  Index image = 224;
  Index channels = 3;
  std::vector<Index> residual = {64, 96, 160, 256};
  std::vector<Index> spatial = {32, 64, 96, 128, 160};
  Index fusion_grid = 14;

  /// Number of stride-2 residual blocks needed after the /4 stem.
  Index residual_downsamples() const;
  /// Nearest-neighbour factor from the spatial branch's image/32 grid.
  Index spatial_upsample() const;

  /// Throws UsageError when either branch cannot land on fusion_grid.
  void validate() const;
};

/// relu(F(x) + skip(x)); F = conv3x3(stride) BN relu conv3x3 BN. The skip is
/// the identity when shapes agree and a 1x1 convolution otherwise.
template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterStore<Scalar>& store, const std::string& name, Index in, Index out, Index stride,
                Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x);

  bool has_projection() const { return projection.has_value(); }

  Conv2d<Scalar> conv1, conv2;
  BatchNorm<Scalar> norm1, norm2;
  std::optional<Conv2d<Scalar>> projection;
};

/// Stem (conv3x3 stride 2, BN, relu, max-pool 2) then four residual blocks.
template <typename Scalar>
class ResidualBranch {
 public:
  ResidualBranch() = default;
  ResidualBranch(ParameterStore<Scalar>& store, const std::string& name, const BranchConfig& cfg, Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> images);

  Index out_channels() const { return cfg.residual.back(); }

  BranchConfig cfg;
  Conv2d<Scalar> stem;
  BatchNorm<Scalar> stem_norm;
  std::vector<ResidualBlock<Scalar>> blocks;
};

/// conv3x3 pad 1, BN, relu, 2x2 max-pool. With `mixed_pool` the pooled
/// result is the elementwise mean of 2x2 max and average pooling.
template <typename Scalar>
class SpatialBlock {
 public:
  SpatialBlock() = default;
  SpatialBlock(ParameterStore<Scalar>& store, const std::string& name, Index in, Index out, bool mixed_pool,
               Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> x);

  Conv2d<Scalar> conv;
  BatchNorm<Scalar> norm;
  bool mixed_pool = false;
};

template <typename Scalar>
struct SpatialOutput {
  Var<Scalar> features;  // image / 32 grid
  Var<Scalar> aligned;   // upsampled to the fusion grid
};

template <typename Scalar>
class SpatialBranch {
 public:
  SpatialBranch() = default;
  SpatialBranch(ParameterStore<Scalar>& store, const std::string& name, const BranchConfig& cfg, Rng& rng);

  SpatialOutput<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> images);

  Index out_channels() const { return cfg.spatial.back(); }

  BranchConfig cfg;
  std::vector<SpatialBlock<Scalar>> blocks;
};

}  // namespace rsfme
