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

#include "rsfme/layers.hpp"

#include <cmath>

namespace rsfme {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

template <typename S>
Tensor<S> truncated_normal(Shape shape, double std, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (Index i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0 * std);
    t[i] = static_cast<S>(v);
  }
  return t;
}

template <typename S>
Tensor<S> he_normal(Shape shape, Index fan_in, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(dist(rng));
  return t;
}

template <typename S>
Linear<S>::Linear(ParameterStore<S>& store, const std::string& name, Index in, Index out,
                  Rng& rng, bool with_bias) {
  weight = &store.add(name + ".weight", truncated_normal<S>({in, out}, 0.02, rng));
  if (with_bias) bias = &store.add(name + ".bias", Tensor<S>({out}));
}

template <typename S>
Var<S> Linear<S>::forward(const Context<S>& ctx, Var<S> x) const {
  Var<S> y = matmul(x, ctx.param(*weight));
  return bias ? add_bias(y, ctx.param(*bias)) : y;
}

template <typename S>
LayerNorm<S>::LayerNorm(ParameterStore<S>& store, const std::string& name, Index dim, double e)
    : eps(e) {
  gamma = &store.add(name + ".gamma", Tensor<S>({dim}, S(1)));
  beta = &store.add(name + ".beta", Tensor<S>({dim}));
}

template <typename S>
Var<S> LayerNorm<S>::forward(const Context<S>& ctx, Var<S> x) const {
  return affine_last_axis(layer_norm(x, static_cast<S>(eps)), ctx.param(*gamma),
                          ctx.param(*beta));
}

template <typename S>
BatchNorm<S>::BatchNorm(ParameterStore<S>& store, const std::string& name, Index channels,
                        double e, double m)
    : eps(e), momentum(m) {
  gamma = &store.add(name + ".gamma", Tensor<S>({channels}, S(1)));
  beta = &store.add(name + ".beta", Tensor<S>({channels}));
  running_mean = &store.add(name + ".running_mean", Tensor<S>({channels}), false);
  running_var = &store.add(name + ".running_var", Tensor<S>({channels}, S(1)), false);
}

template <typename S>
Var<S> BatchNorm<S>::forward(const Context<S>& ctx, Var<S> x) {
  Var<S> normalized;
  if (ctx.training()) {
    NormStats<S> stats;
    normalized = batch_norm(x, static_cast<S>(eps), &stats);
    const S m = static_cast<S>(momentum);
    running_mean->value.vec() = (S(1) - m) * running_mean->value.vec() + m * stats.mean.vec();
    running_var->value.vec() = (S(1) - m) * running_var->value.vec() + m * stats.var.vec();
  } else {
    normalized =
        batch_norm_fixed(x, NormStats<S>{running_mean->value, running_var->value}, static_cast<S>(eps));
  }
  return affine_channels(normalized, ctx.param(*gamma), ctx.param(*beta));
}

template <typename S>
Conv2d<S>::Conv2d(ParameterStore<S>& store, const std::string& name, const ConvSpec& s, Rng& rng,
                  bool with_bias)
    : spec(s) {
  const Index fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
  weight = &store.add(name + ".weight", he_normal<S>(spec.weight_shape(), fan_in, rng));
  if (with_bias) bias = &store.add(name + ".bias", Tensor<S>({spec.out_channels}));
}

template <typename S>
Var<S> Conv2d<S>::forward(const Context<S>& ctx, Var<S> x) const {
  return bias ? conv2d(x, ctx.param(*weight), ctx.param(*bias), spec)
              : conv2d(x, ctx.param(*weight), spec);
}

template Tensor<float> truncated_normal<float>(Shape, double, Rng&);
template Tensor<double> truncated_normal<double>(Shape, double, Rng&);
template Tensor<float> he_normal<float>(Shape, Index, Rng&);
template Tensor<double> he_normal<double>(Shape, Index, Rng&);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Conv2d<float>;
template class Conv2d<double>;

}  // namespace rsfme
