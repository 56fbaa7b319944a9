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

#include <cmath>

#include "oracles.hpp"
#include "rsfme/cnn.hpp"
#include "rsfme/grad_check.hpp"

using namespace rsfme;
using T = Tensor<double>;
using V = Var<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

oracle::Image4 image_of(const T& t) {
  const Nchw s = nchw(t);
  oracle::Image4 x{static_cast<int>(s.n), static_cast<int>(s.c), static_cast<int>(s.h), static_cast<int>(s.w),
                   std::vector<double>(t.data(), t.data() + t.size())};
  return x;
}

std::vector<double> values(const Parameter<double>* p) {
  return std::vector<double>(p->value.data(), p->value.data() + p->value.size());
}

oracle::Image4 conv(const oracle::Image4& x, const Conv2d<double>& c) {
  return oracle::conv2d(x, values(c.weight), c.bias ? values(c.bias) : std::vector<double>{},
                        static_cast<int>(c.spec.out_channels), static_cast<int>(c.spec.kernel_h),
                        static_cast<int>(c.spec.kernel_w), static_cast<int>(c.spec.stride),
                        static_cast<int>(c.spec.pad), static_cast<int>(c.spec.groups));
}

// Training-mode batch norm with biased batch variance, then gamma/beta.
oracle::Image4 bn(oracle::Image4 x, const BatchNorm<double>& norm) {
  for (int c = 0; c < x.c; ++c) {
    double mu = 0, var = 0;
    const double m = x.n * x.h * x.w;
    for (int n = 0; n < x.n; ++n)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) mu += x.at(n, c, i, j) / m;
    for (int n = 0; n < x.n; ++n)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) var += std::pow(x.at(n, c, i, j) - mu, 2) / m;
    for (int n = 0; n < x.n; ++n)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j)
          x.at(n, c, i, j) = (x.at(n, c, i, j) - mu) / std::sqrt(var + norm.eps) * norm.gamma->value[c] +
                             norm.beta->value[c];
  }
  return x;
}

oracle::Image4 relu(oracle::Image4 x) {
  for (double& v : x.v) v = std::max(v, 0.0);
  return x;
}

void fill_random(ParameterStore<double>& store, Rng& rng, double amount = 0.5) {
  for (auto* p : store.trainable()) p->value = random_tensor(p->value.shape(), rng, -amount, amount);
}

BranchConfig tiny_branches() {
  BranchConfig cfg;
  cfg.image = 32;
  cfg.residual = {8, 12, 20, 32};
  cfg.spatial = {4, 8, 12, 16, 20};
  cfg.fusion_grid = 4;
  return cfg;
}

}  // namespace

TEST_CASE("branch config arithmetic") {
  BranchConfig full;
  full.validate();
  CHECK(full.residual.front() == 64);
  CHECK(full.residual.back() == 256);
  CHECK(full.residual_downsamples() == 2);
  CHECK(full.spatial_upsample() == 2);
  BranchConfig tiny = tiny_branches();
  tiny.validate();
  CHECK(tiny.residual_downsamples() == 1);
  CHECK(tiny.spatial_upsample() == 4);
  BranchConfig bad = full;
  bad.fusion_grid = 10;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = full;
  bad.residual = {64, 256};
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("residual_block") {
  Rng rng(1);
  SUBCASE("zero F with matching shapes gives relu(x)") {
    ParameterStore<double> store;
    ResidualBlock<double> block(store, "res", 4, 4, 1, rng);
    CHECK_FALSE(block.has_projection());
    fill_random(store, rng);
    for (auto* c : {&block.conv1, &block.conv2}) {
      c->weight->value.vec().setZero();
      c->bias->value.vec().setZero();
    }
    block.norm2.beta->value.vec().setZero();
    T x = random_tensor({2, 4, 5, 5}, rng);
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      Tape<double> tape;
      Context<double> ctx{tape, mode};
      V y = block.forward(ctx, tape.constant(x));
      for (Index i = 0; i < x.size(); ++i) CHECK(y.value()[i] == std::max(x[i], 0.0));
    }
  }
  SUBCASE("channel change adds a 1x1 projection") {
    ParameterStore<float> store;
    ResidualBlock<float> block(store, "res", 64, 96, 1, rng);
    REQUIRE(block.has_projection());
    CHECK(block.projection->spec.kernel_h == 1);
    CHECK(block.projection->weight->value.shape() == Shape{96, 64, 1, 1});
    Tape<float> tape;
    Context<float> ctx{tape, Mode::kTrain};
    CHECK(block.forward(ctx, tape.constant(Tensor<float>({1, 64, 4, 4}, 0.5f))).dim(1) == 96);
  }
  SUBCASE("matches the layer-by-layer composition oracle") {
    for (auto [in, out, stride] : {std::tuple<Index, Index, Index>{3, 3, 1}, {3, 5, 1}, {4, 6, 2}}) {
      ParameterStore<double> store;
      ResidualBlock<double> block(store, "res", in, out, stride, rng);
      fill_random(store, rng);
      T x = random_tensor({2, in, 6, 6}, rng);
      Tape<double> tape;
      Context<double> ctx{tape, Mode::kTrain};
      V y = block.forward(ctx, tape.constant(x));
      oracle::Image4 xi = image_of(x);
      oracle::Image4 f = bn(conv(relu(bn(conv(xi, block.conv1), block.norm1)), block.conv2), block.norm2);
      oracle::Image4 skip = block.has_projection() ? conv(xi, *block.projection) : xi;
      for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] += skip.v[i];
      f = relu(f);
      REQUIRE(static_cast<Index>(f.v.size()) == y.value().size());
      for (std::size_t i = 0; i < f.v.size(); ++i) CHECK(std::abs(y.value()[static_cast<Index>(i)] - f.v[i]) < 1e-6);
    }
  }
}

TEST_CASE("residual_branch") {
  SUBCASE("full geometry output is 256x14x14") {
    Rng rng(2);
    ParameterStore<float> store;
    ResidualBranch<float> branch(store, "residual", BranchConfig{}, rng);
    Tape<float> tape;
    Context<float> ctx{tape, Mode::kInfer};
    Var<float> y = branch.forward(ctx, tape.constant(Tensor<float>({1, 3, 224, 224})));
    CHECK(y.shape() == Shape{1, 256, 14, 14});
    CHECK(branch.out_channels() == 256);
    CHECK(y.value().all_finite());
  }
  SUBCASE("tiny geometry lands on the 4x4 fusion grid") {
    Rng rng(3);
    ParameterStore<double> store;
    ResidualBranch<double> branch(store, "residual", tiny_branches(), rng);
    Tape<double> tape;
    Context<double> ctx{tape, Mode::kTrain};
    CHECK(branch.forward(ctx, tape.constant(random_tensor({2, 3, 32, 32}, rng))).shape() == Shape{2, 32, 4, 4});
  }
}

TEST_CASE("spatial_block") {
  Rng rng(4);
  SUBCASE("224 halves to 112") {
    ParameterStore<float> store;
    SpatialBlock<float> block(store, "sp", 3, 4, false, rng);
    Tape<float> tape;
    Context<float> ctx{tape};
    CHECK(block.forward(ctx, tape.constant(Tensor<float>({1, 3, 224, 224}))).shape() == Shape{1, 4, 112, 112});
  }
  SUBCASE("constant input with identity-like kernel pools to a constant") {
    for (bool mixed : {false, true}) {
      ParameterStore<double> store;
      SpatialBlock<double> block(store, "sp", 1, 1, mixed, rng);
      block.conv.weight->value = T({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
      Tape<double> tape;
      Context<double> ctx{tape, Mode::kInfer};
      V y = block.forward(ctx, tape.constant(T({1, 1, 4, 4}, 2.0)));
      const double expect = 2.0 / std::sqrt(1.0 + block.norm.eps);
      for (Index i = 0; i < 4; ++i) CHECK(y.value()[i] == doctest::Approx(expect));
    }
  }
  SUBCASE("random 8x8 input matches the composition oracle") {
    for (bool mixed : {false, true}) {
      ParameterStore<double> store;
      SpatialBlock<double> block(store, "sp", 2, 3, mixed, rng);
      fill_random(store, rng);
      T x = random_tensor({2, 2, 8, 8}, rng);
      Tape<double> tape;
      Context<double> ctx{tape, Mode::kTrain};
      V y = block.forward(ctx, tape.constant(x));
      oracle::Image4 a = relu(bn(conv(image_of(x), block.conv), block.norm));
      oracle::Image4 mx = oracle::pool2d(a, true, 2, 2), av = oracle::pool2d(a, false, 2, 2);
      for (std::size_t i = 0; i < mx.v.size(); ++i) {
        const double expect = mixed ? 0.5 * (mx.v[i] + av.v[i]) : mx.v[i];
        CHECK(std::abs(y.value()[static_cast<Index>(i)] - expect) < 1e-6);
      }
    }
  }
  SUBCASE("odd extent is rejected") {
    ParameterStore<double> store;
    SpatialBlock<double> block(store, "sp", 1, 1, false, rng);
    Tape<double> tape;
    Context<double> ctx{tape};
    CHECK_THROWS_AS(block.forward(ctx, tape.constant(T({1, 1, 5, 6}))), ShapeError);
  }
}

TEST_CASE("spatial_branch") {
  SUBCASE("five halvings then 2x alignment at full geometry") {
    Rng rng(5);
    ParameterStore<float> store;
    SpatialBranch<float> branch(store, "spatial", BranchConfig{}, rng);
    CHECK(branch.blocks.size() == 5);
    CHECK(branch.blocks.back().mixed_pool);
    Tape<float> tape;
    Context<float> ctx{tape};
    auto out = branch.forward(ctx, tape.constant(Tensor<float>({1, 3, 224, 224}, 0.1f)));
    CHECK(out.features.shape() == Shape{1, 160, 7, 7});
    CHECK(out.aligned.shape() == Shape{1, 160, 14, 14});
    CHECK(out.aligned.value()(0, 3, 5, 9) == out.features.value()(0, 3, 2, 4));
  }
  SUBCASE("max/avg merge on constant input equals that constant") {
    Rng rng(6);
    ParameterStore<double> store;
    SpatialBlock<double> block(store, "sp", 1, 1, true, rng);
    block.conv.weight->value = T({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    block.conv.bias->value[0] = 1.0;
    Tape<double> tape;
    Context<double> ctx{tape, Mode::kInfer};
    V y = block.forward(ctx, tape.constant(T({1, 1, 2, 2}, 3.0)));
    CHECK(y.value()[0] == doctest::Approx(4.0 / std::sqrt(1.0 + block.norm.eps)));
  }
}

TEST_CASE("branches are deterministic under a fixed seed") {
  auto run = []() {
    Rng rng(7);
    ParameterStore<double> store;
    ResidualBranch<double> r(store, "residual", tiny_branches(), rng);
    SpatialBranch<double> s(store, "spatial", tiny_branches(), rng);
    Rng data(8);
    T x = random_tensor({2, 3, 32, 32}, data);
    Tape<double> tape;
    Context<double> ctx{tape, Mode::kTrain};
    return std::pair{r.forward(ctx, tape.constant(x)).value(), s.forward(ctx, tape.constant(x)).aligned.value()};
  };
  CHECK(run() == run());
}

TEST_CASE("branches pass finite-difference checks at tiny geometry") {
  Rng rng(9);
  const BranchConfig cfg = tiny_branches();
  const T images = random_tensor({2, 3, 32, 32}, rng);
  GradCheckOptions opt;
  opt.tolerance = 1e-3;
  opt.sample_fraction = 0.05;
  SUBCASE("residual") {
    ParameterStore<double> store;
    ResidualBranch<double> branch(store, "residual", cfg, rng);
    auto loss = [&](Tape<double>& tape) {
      Context<double> ctx{tape, Mode::kTrain};
      V y = branch.forward(ctx, tape.constant(images));
      Rng r(1);
      return weighted_sum(y, random_tensor(y.shape(), r));
    };
    auto report = grad_check_parameters("residual_branch", store, loss, opt);
    INFO("err " << report.max_relative_error << " checked " << report.checked << " kinks " << report.kinks);
    CHECK(report.checked > 100);
    CHECK(report.passed());
  }
  SUBCASE("spatial") {
    ParameterStore<double> store;
    SpatialBranch<double> branch(store, "spatial", cfg, rng);
    auto loss = [&](Tape<double>& tape) {
      Context<double> ctx{tape, Mode::kTrain};
      V y = branch.forward(ctx, tape.constant(images)).aligned;
      Rng r(2);
      return weighted_sum(y, random_tensor(y.shape(), r));
    };
    auto report = grad_check_parameters("spatial_branch", store, loss, opt);
    INFO("err " << report.max_relative_error << " checked " << report.checked << " kinks " << report.kinks);
    CHECK(report.checked > 100);
    CHECK(report.passed());
  }
}
