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

#include <memory>
#include <string>
#include <vector>

#include "rsfme/layers.hpp"

namespace rsfme {

/// Geometry of the windowed transformer backbone.
///
/// Tokens of a batch are stored as a [B * (N + 1), D] matrix. Row 0 of each
/// image is the class token, rows 1..N the patches in row-major grid order.
struct SwinConfig {
  Index image = 224;
  Index channels = 3;
  Index patch = 16;
  Index dim = 768;
  Index heads = 4;
  Index depth = 4;
  Index window = 7;
  Index shift = 3;

  Index grid() const { return image / patch; }
  Index patches() const { return grid() * grid(); }
  Index head_dim() const { return dim / heads; }

  /// Throws UsageError on an inconsistent geometry.
  void validate() const;
};

/// Token indices (0..grid²-1, row-major) of every window. With a nonzero
/// shift the grid is first rolled by -shift on both axes, so window entry
/// (r, c) of the rolled grid is token ((r + shift) % grid, (c + shift) % grid).
/// Edge windows are truncated when window does not divide grid.
std::vector<std::vector<Index>> window_index_sets(Index grid, Index window, Index shift);

/// Splits [grid², D] patch tokens into windows.
template <typename Scalar>
std::vector<Tensor<Scalar>> window_partition(const Tensor<Scalar>& tokens, Index grid, Index window,
                                             Index shift);

/// Inverse of window_partition.
template <typename Scalar>
Tensor<Scalar> window_reverse(const std::vector<Tensor<Scalar>>& windows, Index grid, Index window,
                              Index shift);

/// Attention groups for a batch: one global group per class token and one
/// group per window whose keys are the window tokens plus the class token.
std::shared_ptr<const std::vector<AttentionGroup>> swin_attention_groups(Index batch, Index grid,
                                                                         Index window, Index shift);

/// Patch projection, class token and positional table.
template <typename Scalar>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(ParameterStore<Scalar>& store, const std::string& name, const SwinConfig& cfg, Rng& rng);

  /// [B, C, H, W] -> [B * (N + 1), D]
  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> images) const;

  SwinConfig cfg;
  Linear<Scalar> proj;
  Parameter<Scalar>* class_token = nullptr;  // [1, D]
  Parameter<Scalar>* position = nullptr;     // [N + 1, D]
};

/// MHA(LN(X)) + X over (optionally shifted) windows.
template <typename Scalar>
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(ParameterStore<Scalar>& store, const std::string& name, const SwinConfig& cfg,
                  bool shifted, Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> tokens) const;

  SwinConfig cfg;
  bool shifted = false;
  LayerNorm<Scalar> norm;
  Linear<Scalar> query, key, value, out;
};

/// Expand D -> 4D, GELU, BN, f(X) = DWConv3x3(X) + X on the patch grid,
/// project 4D -> D, BN. The class token bypasses the depthwise convolution.
template <typename Scalar>
class InverseResidualBlock {
 public:
  static constexpr Index kExpansion = 4;

  InverseResidualBlock() = default;
  InverseResidualBlock(ParameterStore<Scalar>& store, const std::string& name, const SwinConfig& cfg,
                       Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> tokens);

  SwinConfig cfg;
  Linear<Scalar> expand;
  BatchNorm<Scalar> expand_norm;
  Conv2d<Scalar> depthwise;
  Linear<Scalar> project;
  BatchNorm<Scalar> project_norm;
};

/// TF = IRB(LN(M)) + M with M = MHA(LN(X)) + X.
template <typename Scalar>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore<Scalar>& store, const std::string& name, const SwinConfig& cfg,
                   bool shifted, Rng& rng);

  Var<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> tokens);

  WindowAttention<Scalar> attention;
  LayerNorm<Scalar> norm;
  InverseResidualBlock<Scalar> irb;
};

template <typename Scalar>
struct BackboneOutput {
  Var<Scalar> grid;         // [B, D, g, g]
  Var<Scalar> class_token;  // [B, D]
};

template <typename Scalar>
class SwinBackbone {
 public:
  SwinBackbone() = default;
  SwinBackbone(ParameterStore<Scalar>& store, const std::string& name, const SwinConfig& cfg, Rng& rng);

  BackboneOutput<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> images);

  SwinConfig cfg;
  PatchEmbed<Scalar> embed;
  std::vector<TransformerBlock<Scalar>> blocks;
  LayerNorm<Scalar> norm;
};

/// Closed-form trainable parameter count of SwinBackbone.
Index swin_parameter_count(const SwinConfig& cfg);

/// [B * (N + 1), W] token rows -> [B, W, g, g] patch grid (class rows dropped).
template <typename Scalar>
Var<Scalar> tokens_to_grid(Var<Scalar> tokens, Index batch, Index grid);

/// [B, W, g, g] -> [B * (N + 1), W] with zero class rows.
template <typename Scalar>
Var<Scalar> grid_to_tokens(Var<Scalar> grid);

}  // namespace rsfme
