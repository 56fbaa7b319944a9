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

#include "rsfme/cnn.hpp"

namespace rsfme {

namespace {

// log2(ratio) when ratio is a power of two >= 1, otherwise -1.
Index exact_log2(Index num, Index den) {
  if (den < 1 || num % den != 0) return -1;
  Index ratio = num / den, k = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0) return -1;
    ratio /= 2;
    ++k;
  }
  return k;
}

ConvSpec conv3x3(Index in, Index out, Index stride) { return ConvSpec{3, 3, stride, 1, in, out, 1}; }

}  // namespace

Index BranchConfig::residual_downsamples() const {
  return image % 4 == 0 ? exact_log2(image / 4, fusion_grid) : -1;
}

Index BranchConfig::spatial_upsample() const {
  if (image % 32 != 0 || fusion_grid % (image / 32) != 0) return -1;
  return fusion_grid / (image / 32);
}

void BranchConfig::validate() const {
  if (residual.size() != 4) throw UsageError("residual.channels needs 4 entries");
  if (spatial.size() != 5) throw UsageError("spatial.channels needs 5 entries");
  for (Index c : residual)
    if (c < 1) throw UsageError("residual.channels must be positive");
  for (Index c : spatial)
    if (c < 1) throw UsageError("spatial.channels must be positive");
  const Index k = residual_downsamples();
  if (k < 0 || k > 3) {
    throw UsageError("residual branch cannot reach a " + std::to_string(fusion_grid) + " grid from " +
                     std::to_string(image) + " pixels");
  }
  if (spatial_upsample() < 1) {
    throw UsageError("spatial branch grid " + std::to_string(image / 32) + " does not divide fusion grid " +
                     std::to_string(fusion_grid));
  }
}

template <typename S>
ResidualBlock<S>::ResidualBlock(ParameterStore<S>& store, const std::string& name, Index in, Index out,
                                Index stride, Rng& rng) {
  conv1 = Conv2d<S>(store, name + ".conv1", conv3x3(in, out, stride), rng);
  norm1 = BatchNorm<S>(store, name + ".norm1", out);
  conv2 = Conv2d<S>(store, name + ".conv2", conv3x3(out, out, 1), rng);
  norm2 = BatchNorm<S>(store, name + ".norm2", out);
  if (in != out || stride != 1) {
    projection = Conv2d<S>(store, name + ".projection", ConvSpec{1, 1, stride, 0, in, out, 1}, rng);
  }
}

template <typename S>
Var<S> ResidualBlock<S>::forward(const Context<S>& ctx, Var<S> x) {
  Var<S> f = relu(norm1.forward(ctx, conv1.forward(ctx, x)));
  f = norm2.forward(ctx, conv2.forward(ctx, f));
  return relu(add(f, projection ? projection->forward(ctx, x) : x));
}

template <typename S>
ResidualBranch<S>::ResidualBranch(ParameterStore<S>& store, const std::string& name, const BranchConfig& c,
                                  Rng& rng)
    : cfg(c) {
  cfg.validate();
  const auto& ch = cfg.residual;
  stem = Conv2d<S>(store, name + ".stem", conv3x3(cfg.channels, ch[0], 2), rng);
  stem_norm = BatchNorm<S>(store, name + ".stem_norm", ch[0]);
  const Index downsamples = cfg.residual_downsamples();
  blocks.emplace_back(store, name + ".block0", ch[0], ch[0], 1, rng);
  for (Index i = 1; i < 4; ++i) {
    const Index stride = i <= downsamples ? 2 : 1;
    blocks.emplace_back(store, name + ".block" + std::to_string(i), ch[static_cast<std::size_t>(i - 1)],
                        ch[static_cast<std::size_t>(i)], stride, rng);
  }
}

template <typename S>
Var<S> ResidualBranch<S>::forward(const Context<S>& ctx, Var<S> images) {
  Var<S> x = relu(stem_norm.forward(ctx, stem.forward(ctx, images)));
  x = pool2d(x, PoolSpec{PoolMode::kMax, 2, 2});
  for (auto& b : blocks) x = b.forward(ctx, x);
  return x;
}

template <typename S>
SpatialBlock<S>::SpatialBlock(ParameterStore<S>& store, const std::string& name, Index in, Index out, bool mixed,
                              Rng& rng)
    : mixed_pool(mixed) {
  conv = Conv2d<S>(store, name + ".conv", conv3x3(in, out, 1), rng);
  norm = BatchNorm<S>(store, name + ".norm", out);
}

template <typename S>
Var<S> SpatialBlock<S>::forward(const Context<S>& ctx, Var<S> x) {
  const Nchw s = nchw(x.value());
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("spatial_block: odd extent " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  Var<S> y = relu(norm.forward(ctx, conv.forward(ctx, x)));
  Var<S> pooled = pool2d(y, PoolSpec{PoolMode::kMax, 2, 2});
  if (!mixed_pool) return pooled;
  return scale(add(pooled, pool2d(y, PoolSpec{PoolMode::kAvg, 2, 2})), S(0.5));
}

template <typename S>
SpatialBranch<S>::SpatialBranch(ParameterStore<S>& store, const std::string& name, const BranchConfig& c,
                                Rng& rng)
    : cfg(c) {
  cfg.validate();
  Index in = cfg.channels;
  for (std::size_t i = 0; i < cfg.spatial.size(); ++i) {
    blocks.emplace_back(store, name + ".block" + std::to_string(i), in, cfg.spatial[i],
                        i + 1 == cfg.spatial.size(), rng);
    in = cfg.spatial[i];
  }
}

template <typename S>
SpatialOutput<S> SpatialBranch<S>::forward(const Context<S>& ctx, Var<S> images) {
  Var<S> x = images;
  for (auto& b : blocks) x = b.forward(ctx, x);
  return {x, upsample_nearest(x, cfg.spatial_upsample())};
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class ResidualBranch<float>;
template class ResidualBranch<double>;
template class SpatialBlock<float>;
template class SpatialBlock<double>;
template class SpatialBranch<float>;
template class SpatialBranch<double>;

}  // namespace rsfme
