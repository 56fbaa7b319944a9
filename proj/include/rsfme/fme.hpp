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
#include <optional>
#include <string>
#include <vector>

#include "rsfme/cnn.hpp"
#include "rsfme/swint.hpp"

namespace rsfme {

enum class Variant { kSwinT, kSwinTSpatial, kSwinTResidual, kFull };

/// Accepts "swint", "swint+s", "swint+r" and "rs-fme-swint".
Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
bool uses_residual(Variant v);
bool uses_spatial(Variant v);

struct ModelConfig {
  SwinConfig swin;
  BranchConfig branches;
  Variant variant = Variant::kFull;
  double dropout = 0.5;
  Index classes = 5;

  /// 224 pixels, 16 pixel patches, D = 768.
  static ModelConfig full();
  /// 32 pixels, 8 pixel patches, D = 32, CNN widths divided by 8.
  static ModelConfig tiny();

  Index image() const { return swin.image; }
  Index fused_channels() const;
  void validate() const;
};

/// Channel concatenation in (SwinT, Residual, Spatial) order; absent branches
/// are skipped. All inputs must share N, H and W.
template <typename Scalar>
Var<Scalar> fuse(Var<Scalar> swint, const Var<Scalar>* residual, const Var<Scalar>* spatial);

/// Global average pool, dropout (training only), one fully connected layer.
template <typename Scalar>
class FmeHead {
 public:
  FmeHead() = default;
  FmeHead(ParameterStore<Scalar>& store, const std::string& name, Index channels, Index classes, double dropout,
          Rng& rng);

  struct Output {
    Var<Scalar> pooled;  // [B, C_total]
    Var<Scalar> logits;  // [B, c]
  };

  Output forward(const Context<Scalar>& ctx, Var<Scalar> fused) const;

  Linear<Scalar> fc;
  double dropout = 0.5;
};

template <typename Scalar>
struct ModelOutput {
  Var<Scalar> fused;
  Var<Scalar> pooled;
  Var<Scalar> logits;
};

/// The assembled hybrid. Owns its parameters; every module points into
/// `params`, so the model is movable but not copyable.
template <typename Scalar>
class RsFmeModel {
 public:
  RsFmeModel(const ModelConfig& cfg, std::uint64_t seed);
  RsFmeModel(RsFmeModel&&) = default;
  RsFmeModel& operator=(RsFmeModel&&) = default;

  /// images [B, C, H, W] in model geometry.
  ModelOutput<Scalar> forward(const Context<Scalar>& ctx, Var<Scalar> images);

  /// Softmax class probabilities in inference mode.
  Tensor<Scalar> predict(const Tensor<Scalar>& images);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }

 private:
  ModelConfig cfg_;
  ParameterStore<Scalar> params_;
  SwinBackbone<Scalar> swint_;
  std::optional<ResidualBranch<Scalar>> residual_;
  std::optional<SpatialBranch<Scalar>> spatial_;
  FmeHead<Scalar> head_;
};

}  // namespace rsfme
