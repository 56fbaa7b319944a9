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

#include "rsfme/gradient_suite.hpp"

#include <algorithm>
#include <string>

#include "rsfme/cnn.hpp"
#include "rsfme/fme.hpp"
#include "rsfme/swint.hpp"

namespace rsfme {

namespace {

using T = Tensor<double>;
using V = Var<double>;
using Inputs = std::vector<V>;

T uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

/// Scalar readout with weights fixed by `salt`, so repeated evaluations see
/// the same function.
V readout(V y, std::uint64_t salt) {
  Rng r(salt);
  return weighted_sum(y, uniform(y.shape(), r));
}

void randomize(ParameterStore<double>& store, Rng& rng, double amount) {
  for (auto* p : store.trainable()) p->value = uniform(p->value.shape(), rng, -amount, amount);
}

GradCheckReport merge(std::string name, const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport r;
  r.name = std::move(name);
  r.tolerance = a.tolerance;
  r.max_relative_error = std::max(a.max_relative_error, b.max_relative_error);
  r.checked = a.checked + b.checked;
  r.kinks = a.kinks + b.kinks;
  return r;
}

SwinConfig small_swin() {
  SwinConfig cfg;
  cfg.image = 16;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.window = 2;
  cfg.shift = 1;
  return cfg;
}

/// Checks a module's forward map w.r.t. its input and its parameters.
template <typename Forward>
GradCheckReport block_check(std::string name, ParameterStore<double>& store, Forward forward, const T& input,
                            std::uint64_t salt, const GradCheckOptions& opt) {
  auto in_fn = [&](Tape<double>& tape, const Inputs& in) {
    Context<double> ctx{tape, Mode::kTrain};
    return readout(forward(ctx, in[0]), salt);
  };
  const GradCheckReport wrt_input = grad_check(name, in_fn, {input}, opt);
  auto param_fn = [&](Tape<double>& tape) {
    Context<double> ctx{tape, Mode::kTrain};
    return readout(forward(ctx, tape.constant(input)), salt);
  };
  const GradCheckReport wrt_params = grad_check_parameters(name, store, param_fn, opt);
  return merge(std::move(name), wrt_input, wrt_params);
}

}  // namespace

std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options,
                                                const std::function<void(const GradCheckReport&)>& progress) {
  std::vector<GradCheckReport> reports;
  Rng rng(derive_seed(options.seed, 0x67726164));
  GradCheckOptions op_opt;
  op_opt.tolerance = options.op_tolerance;
  op_opt.seed = options.seed;
  auto record = [&](GradCheckReport r) {
    if (progress) progress(r);
    reports.push_back(std::move(r));
  };
  auto op = [&](const std::string& name, const ScalarFn& fn, std::vector<T> inputs) {
    record(grad_check(name, fn, std::move(inputs), op_opt));
  };

  // Elementwise, reductions and layout.
  op("add", [](Tape<double>&, const Inputs& in) { return readout(add(in[0], in[1]), 1); },
     {uniform({3, 4}, rng), uniform({3, 4}, rng)});
  op("sub", [](Tape<double>&, const Inputs& in) { return readout(sub(in[0], in[1]), 2); },
     {uniform({3, 4}, rng), uniform({3, 4}, rng)});
  op("mul", [](Tape<double>&, const Inputs& in) { return readout(mul(in[0], in[1]), 3); },
     {uniform({3, 4}, rng), uniform({3, 4}, rng)});
  op("scale", [](Tape<double>&, const Inputs& in) { return readout(scale(in[0], -1.7), 4); }, {uniform({2, 5}, rng)});
  op("add_bias", [](Tape<double>&, const Inputs& in) { return readout(add_bias(in[0], in[1]), 5); },
     {uniform({3, 4}, rng), uniform({4}, rng)});
  op("affine_last_axis",
     [](Tape<double>&, const Inputs& in) { return readout(affine_last_axis(in[0], in[1], in[2]), 6); },
     {uniform({3, 4}, rng), uniform({4}, rng), uniform({4}, rng)});
  op("affine_channels",
     [](Tape<double>&, const Inputs& in) { return readout(affine_channels(in[0], in[1], in[2]), 7); },
     {uniform({2, 3, 2, 2}, rng), uniform({3}, rng), uniform({3}, rng)});
  op("sum", [](Tape<double>&, const Inputs& in) { return sum(mul(in[0], in[0])); }, {uniform({3, 4}, rng)});
  op("mean", [](Tape<double>&, const Inputs& in) { return mean(mul(in[0], in[0])); }, {uniform({3, 4}, rng)});
  op("weighted_sum", [](Tape<double>&, const Inputs& in) { return readout(in[0], 8); }, {uniform({3, 4}, rng)});
  op("matmul", [](Tape<double>&, const Inputs& in) { return readout(matmul(in[0], in[1]), 9); },
     {uniform({3, 4}, rng), uniform({4, 2}, rng)});
  op("transpose", [](Tape<double>&, const Inputs& in) { return readout(transpose(in[0]), 10); },
     {uniform({3, 4}, rng)});
  op("reshape", [](Tape<double>&, const Inputs& in) { return readout(reshape(in[0], {2, 6}), 11); },
     {uniform({3, 4}, rng)});
  op("permute", [](Tape<double>&, const Inputs& in) { return readout(permute(in[0], {2, 0, 1}), 12); },
     {uniform({2, 3, 4}, rng)});
  op("concat", [](Tape<double>&, const Inputs& in) { return readout(concat<double>({in[0], in[1]}, 1), 13); },
     {uniform({2, 3}, rng), uniform({2, 2}, rng)});
  op("slice", [](Tape<double>&, const Inputs& in) { return readout(slice(in[0], 1, 1, 2), 14); },
     {uniform({3, 4}, rng)});
  op("concat_channels",
     [](Tape<double>&, const Inputs& in) { return readout(concat_channels<double>({in[0], in[1]}), 15); },
     {uniform({2, 2, 3, 3}, rng), uniform({2, 1, 3, 3}, rng)});
  op("gather_rows", [](Tape<double>&, const Inputs& in) { return readout(gather_rows(in[0], {2, 0, 2, 1}), 16); },
     {uniform({3, 4}, rng)});
  op("scatter_rows", [](Tape<double>&, const Inputs& in) { return readout(scatter_rows(in[0], {4, 0, 2}, 5), 17); },
     {uniform({3, 4}, rng)});
  op("gather_elements",
     [](Tape<double>&, const Inputs& in) { return readout(gather_elements(in[0], {5, 0, 0, 3, 1, 2}, {2, 3}), 18); },
     {uniform({2, 3}, rng)});

  // Activations and normalization.
  op("relu", [](Tape<double>&, const Inputs& in) { return readout(relu(in[0]), 19); }, {uniform({4, 5}, rng, -2, 2)});
  op("gelu", [](Tape<double>&, const Inputs& in) { return readout(gelu(in[0]), 20); }, {uniform({4, 5}, rng, -3, 3)});
  op("softmax", [](Tape<double>&, const Inputs& in) { return readout(softmax(in[0]), 21); },
     {uniform({3, 5}, rng, -2, 2)});
  op("log_softmax", [](Tape<double>&, const Inputs& in) { return readout(log_softmax(in[0]), 22); },
     {uniform({3, 5}, rng, -2, 2)});
  op("layer_norm", [](Tape<double>&, const Inputs& in) { return readout(layer_norm(in[0], 1e-5), 23); },
     {uniform({3, 6}, rng, -2, 2)});
  op("batch_norm", [](Tape<double>&, const Inputs& in) { return readout(batch_norm(in[0], 1e-5), 24); },
     {uniform({3, 2, 2, 2}, rng, -2, 2)});
  {
    NormStats<double> stats{uniform({2}, rng), uniform({2}, rng, 0.5, 1.5)};
    op("batch_norm_fixed",
       [stats](Tape<double>&, const Inputs& in) { return readout(batch_norm_fixed(in[0], stats, 1e-5), 25); },
       {uniform({3, 2, 2, 2}, rng)});
  }
  op("dropout",
     [](Tape<double>&, const Inputs& in) {
       Rng mask(26);
       return readout(dropout(in[0], 0.5, mask), 26);
     },
     {uniform({4, 5}, rng)});

  // Convolution, pooling and resampling.
  {
    const ConvSpec dense{3, 3, 1, 1, 2, 3, 1};
    op("conv2d", [dense](Tape<double>&, const Inputs& in) { return readout(conv2d(in[0], in[1], in[2], dense), 27); },
       {uniform({2, 2, 5, 4}, rng), uniform(dense.weight_shape(), rng), uniform({3}, rng)});
    const ConvSpec depthwise{3, 3, 1, 1, 4, 4, 4};
    op("conv2d_depthwise",
       [depthwise](Tape<double>&, const Inputs& in) { return readout(conv2d(in[0], in[1], in[2], depthwise), 28); },
       {uniform({2, 4, 4, 4}, rng), uniform(depthwise.weight_shape(), rng), uniform({4}, rng)});
    const ConvSpec strided{3, 3, 2, 1, 2, 3, 1};
    op("conv2d_stride2", [strided](Tape<double>&, const Inputs& in) { return readout(conv2d(in[0], in[1], strided), 29); },
       {uniform({1, 2, 6, 5}, rng), uniform(strided.weight_shape(), rng)});
    const ConvSpec pointwise{1, 1, 2, 0, 3, 2, 1};
    op("conv2d_1x1_stride2",
       [pointwise](Tape<double>&, const Inputs& in) { return readout(conv2d(in[0], in[1], pointwise), 30); },
       {uniform({1, 3, 4, 4}, rng), uniform(pointwise.weight_shape(), rng)});
  }
  op("pool2d_max", [](Tape<double>&, const Inputs& in) { return readout(pool2d(in[0], {PoolMode::kMax, 2, 2}), 31); },
     {uniform({2, 2, 4, 6}, rng)});
  op("pool2d_avg", [](Tape<double>&, const Inputs& in) { return readout(pool2d(in[0], {PoolMode::kAvg, 2, 2}), 32); },
     {uniform({2, 2, 4, 6}, rng)});
  op("upsample_nearest", [](Tape<double>&, const Inputs& in) { return readout(upsample_nearest(in[0], 2), 33); },
     {uniform({1, 2, 3, 2}, rng)});
  op("global_avg_pool", [](Tape<double>&, const Inputs& in) { return readout(global_avg_pool(in[0]), 34); },
     {uniform({2, 3, 3, 2}, rng)});

  // Attention and loss.
  op("attention_weights", [](Tape<double>&, const Inputs& in) { return readout(attention_weights(in[0], in[1]), 35); },
     {uniform({3, 4}, rng), uniform({5, 4}, rng)});
  op("scaled_attention",
     [](Tape<double>&, const Inputs& in) { return readout(scaled_attention(in[0], in[1], in[2]), 36); },
     {uniform({3, 4}, rng), uniform({5, 4}, rng), uniform({5, 2}, rng)});
  {
    auto groups = std::make_shared<const std::vector<AttentionGroup>>(
        std::vector<AttentionGroup>{{{0, 2}, {0, 1, 2, 4}}, {{1, 3, 4}, {1, 3}}});
    op("grouped_attention",
       [groups](Tape<double>&, const Inputs& in) {
         return readout(grouped_attention(in[0], in[1], in[2], 2, groups), 37);
       },
       {uniform({5, 4}, rng), uniform({5, 4}, rng), uniform({5, 4}, rng)});
  }
  op("cross_entropy", [](Tape<double>&, const Inputs& in) { return cross_entropy(in[0], {2, 0, 1}); },
     {uniform({3, 4}, rng, -2, 2)});

  // Assembled blocks.
  GradCheckOptions block_opt;
  block_opt.tolerance = options.block_tolerance;
  block_opt.seed = options.seed;
  const SwinConfig swin = small_swin();
  const T tokens = uniform({2 * (swin.patches() + 1), swin.dim}, rng);
  {
    ParameterStore<double> store;
    WindowAttention<double> mha(store, "mha", swin, true, rng);
    randomize(store, rng, 0.5);
    record(block_check(
        "mha_block", store, [&](const Context<double>& ctx, V x) { return mha.forward(ctx, x); }, tokens, 40,
        block_opt));
  }
  {
    ParameterStore<double> store;
    InverseResidualBlock<double> irb(store, "irb", swin, rng);
    randomize(store, rng, 0.5);
    record(block_check(
        "irb", store, [&](const Context<double>& ctx, V x) { return irb.forward(ctx, x); }, tokens, 41, block_opt));
  }
  {
    ParameterStore<double> store;
    TransformerBlock<double> block(store, "block", swin, true, rng);
    randomize(store, rng, 0.5);
    record(block_check(
        "transformer_block", store, [&](const Context<double>& ctx, V x) { return block.forward(ctx, x); }, tokens,
        42, block_opt));
  }
  {
    ParameterStore<double> store;
    ResidualBlock<double> projected(store, "rb0", 3, 4, 2, rng);
    ResidualBlock<double> identity(store, "rb1", 4, 4, 1, rng);
    randomize(store, rng, 0.5);
    record(block_check(
        "residual_block", store,
        [&](const Context<double>& ctx, V x) { return identity.forward(ctx, projected.forward(ctx, x)); },
        uniform({2, 3, 6, 6}, rng), 43, block_opt));
  }
  {
    ParameterStore<double> store;
    SpatialBlock<double> plain(store, "sb0", 3, 4, false, rng);
    SpatialBlock<double> mixed(store, "sb1", 4, 3, true, rng);
    randomize(store, rng, 0.5);
    record(block_check(
        "spatial_block", store,
        [&](const Context<double>& ctx, V x) { return mixed.forward(ctx, plain.forward(ctx, x)); },
        uniform({2, 3, 8, 8}, rng), 44, block_opt));
  }
  {
    RsFmeModel<double> model(ModelConfig::tiny(), derive_seed(options.seed, 45));
    const T images = uniform({2, 3, model.config().image(), model.config().image()}, rng, 0.0, 1.0);
    const std::vector<int> labels{1, 3};
    auto loss = [&](Tape<double>& tape) {
      Rng mask(46);
      Context<double> ctx{tape, Mode::kTrain, &mask};
      return cross_entropy(model.forward(ctx, tape.constant(images)).logits, labels);
    };
    GradCheckOptions model_opt = block_opt;
    model_opt.sample_fraction = options.model_fraction;
    record(grad_check_parameters("rs-fme-swint(tiny)", model.parameters(), loss, model_opt));
  }
  return reports;
}

}  // namespace rsfme
