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
#include <memory>
#include <random>
#include <vector>

#include "rsfme/autodiff.hpp"

// Differentiable operations over Var<Scalar>. Every op records its output on
// the inputs' tape; instantiated for float and double.

namespace rsfme {

struct ConvSpec {
  Index kernel_h = 3;
  Index kernel_w = 3;
  Index stride = 1;
  Index pad = 1;
  Index in_channels = 1;
  Index out_channels = 1;
  Index groups = 1;

  /// floor((in + 2 pad - kernel) / stride) + 1; throws when < 1.
  Index output_extent(Index in, Index kernel) const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  bool depthwise() const { return groups == in_channels && groups > 1; }
};

enum class PoolMode { kMax, kAvg };

struct PoolSpec {
  PoolMode mode = PoolMode::kMax;
  Index size = 2;
  Index stride = 2;
};

/// Per-channel batch statistics (biased variance) from a training-mode pass.
template <typename Scalar>
struct NormStats {
  Tensor<Scalar> mean;
  Tensor<Scalar> var;
};

// Elementwise arithmetic.
template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> scale(Var<Scalar> x, Scalar factor);

/// x[..., D] + bias[D]
template <typename Scalar> Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias);
/// x[..., D] * gamma[D] + beta[D]
template <typename Scalar>
Var<Scalar> affine_last_axis(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta);
/// x[N, C, ...] * gamma[C] + beta[C]
template <typename Scalar>
Var<Scalar> affine_channels(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta);

// Reductions.
template <typename Scalar> Var<Scalar> sum(Var<Scalar> x);
template <typename Scalar> Var<Scalar> mean(Var<Scalar> x);
/// sum(x * weights) for a constant weight tensor of the same shape.
template <typename Scalar> Var<Scalar> weighted_sum(Var<Scalar> x, const Tensor<Scalar>& weights);

// Linear algebra and layout.
template <typename Scalar> Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> transpose(Var<Scalar> x);
template <typename Scalar> Var<Scalar> reshape(Var<Scalar> x, Shape shape);
template <typename Scalar> Var<Scalar> permute(Var<Scalar> x, std::vector<Index> axes);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& xs, Index axis);
template <typename Scalar> Var<Scalar> slice(Var<Scalar> x, Index axis, Index begin, Index count);
/// Concatenation along axis 1 of NCHW (or [N, C]) tensors.
template <typename Scalar> Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& xs);
/// Rows of x (axis 0) picked by index; repeats allowed, backward scatter-adds.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> x, const std::vector<Index>& rows);
/// Adjoint of gather_rows: row k of x lands on rows[k] of a zero tensor.
template <typename Scalar>
Var<Scalar> scatter_rows(Var<Scalar> x, const std::vector<Index>& rows, Index total_rows);
/// out.flat[k] = x.flat[sources[k]]; a general permutation/selection op.
template <typename Scalar>
Var<Scalar> gather_elements(Var<Scalar> x, const std::vector<Index>& sources, Shape out_shape);

// Activations and normalization.
template <typename Scalar> Var<Scalar> relu(Var<Scalar> x);
/// Exact x * Phi(x).
template <typename Scalar> Var<Scalar> gelu(Var<Scalar> x);
/// Softmax over the last axis with max subtraction.
template <typename Scalar> Var<Scalar> softmax(Var<Scalar> x);
template <typename Scalar> Var<Scalar> log_softmax(Var<Scalar> x);
/// (x - mean) / sqrt(var + eps) over the last axis, no affine.
template <typename Scalar> Var<Scalar> layer_norm(Var<Scalar> x, Scalar eps);
/// Training-mode batch normalization over axis 1 of [N, C, ...], no affine.
/// Batch statistics are written to `stats` when non-null.
template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, Scalar eps, NormStats<Scalar>* stats = nullptr);
/// Inference-mode batch normalization with fixed statistics, no affine.
template <typename Scalar>
Var<Scalar> batch_norm_fixed(Var<Scalar> x, const NormStats<Scalar>& stats, Scalar eps);
/// Inverted dropout: keeps with probability 1 - rate, scales by 1 / (1 - rate).
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, Scalar rate, std::mt19937_64& rng);

// Convolution and pooling over NCHW.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, const ConvSpec& spec);
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, const ConvSpec& spec);
template <typename Scalar> Var<Scalar> pool2d(Var<Scalar> x, const PoolSpec& spec);
template <typename Scalar> Var<Scalar> upsample_nearest(Var<Scalar> x, Index factor);
/// [N, C, H, W] -> [N, C]
template <typename Scalar> Var<Scalar> global_avg_pool(Var<Scalar> x);

// Attention and loss.
/// SoftMax(Q K^T / sqrt(d)) V with Q [Tq, d], K and V [Tk, d].
template <typename Scalar>
Var<Scalar> scaled_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v);
/// The SoftMax(Q K^T / sqrt(d)) matrix of scaled_attention.
template <typename Scalar> Var<Scalar> attention_weights(Var<Scalar> q, Var<Scalar> k);

/// Rows of Q that attend to the same set of K/V rows.
struct AttentionGroup {
  std::vector<Index> queries;
  std::vector<Index> keys;
};

/// Multi-head scaled attention evaluated per group. q, k, v are [T, D] with
/// heads occupying contiguous column blocks of width D / heads. Every row of
/// q must appear in exactly one group; the output row takes its place.
template <typename Scalar>
Var<Scalar> grouped_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, Index heads,
                              std::shared_ptr<const std::vector<AttentionGroup>> groups);
/// Mean over the batch of -log softmax(logits)[label]; logits [B, c].
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<int>& labels);

}  // namespace rsfme
