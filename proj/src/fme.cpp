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

#include "rsfme/fme.hpp"

namespace rsfme {

Variant parse_variant(const std::string& name) {
  if (name == "swint") return Variant::kSwinT;
  if (name == "swint+s") return Variant::kSwinTSpatial;
  if (name == "swint+r") return Variant::kSwinTResidual;
  if (name == "rs-fme-swint") return Variant::kFull;
  throw UsageError("unknown model variant '" + name + "' (expected swint, swint+s, swint+r or rs-fme-swint)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kSwinT: return "swint";
    case Variant::kSwinTSpatial: return "swint+s";
    case Variant::kSwinTResidual: return "swint+r";
    case Variant::kFull: return "rs-fme-swint";
  }
  return "?";
}

bool uses_residual(Variant v) { return v == Variant::kSwinTResidual || v == Variant::kFull; }
bool uses_spatial(Variant v) { return v == Variant::kSwinTSpatial || v == Variant::kFull; }

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.swin.image = 32;
  cfg.swin.patch = 8;
  cfg.swin.dim = 32;
  cfg.swin.heads = 2;
  cfg.swin.depth = 2;
  cfg.swin.window = 2;
  cfg.swin.shift = 1;
  cfg.branches.image = 32;
  cfg.branches.residual = {8, 12, 20, 32};
  cfg.branches.spatial = {4, 8, 12, 16, 20};
  cfg.branches.fusion_grid = 4;
  return cfg;
}

Index ModelConfig::fused_channels() const {
  Index c = swin.dim;
  if (uses_residual(variant)) c += branches.residual.back();
  if (uses_spatial(variant)) c += branches.spatial.back();
  return c;
}

void ModelConfig::validate() const {
  swin.validate();
  if (classes < 2) throw UsageError("model.classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("model.dropout must lie in [0, 1)");
  if (branches.image != swin.image || branches.channels != swin.channels) {
    throw UsageError("branch and backbone image geometry differ");
  }
  if (uses_residual(variant) || uses_spatial(variant)) {
    branches.validate();
    if (branches.fusion_grid != swin.grid()) {
      throw UsageError("branches.fusion_grid " + std::to_string(branches.fusion_grid) +
                       " differs from the backbone grid " + std::to_string(swin.grid()));
    }
  }
}

template <typename S>
Var<S> fuse(Var<S> swint, const Var<S>* residual, const Var<S>* spatial) {
  std::vector<Var<S>> parts{swint};
  for (const Var<S>* p : {residual, spatial}) {
    if (!p) continue;
    if (p->rank() != 4 || p->dim(0) != swint.dim(0) || p->dim(2) != swint.dim(2) || p->dim(3) != swint.dim(3)) {
      throw ShapeError("fuse: branch grid " + shape_string(p->shape()) + " does not match " +
                       shape_string(swint.shape()));
    }
    parts.push_back(*p);
  }
  return concat_channels(parts);
}

template <typename S>
FmeHead<S>::FmeHead(ParameterStore<S>& store, const std::string& name, Index channels, Index classes, double rate,
                    Rng& rng)
    : dropout(rate) {
  fc = Linear<S>(store, name + ".fc", channels, classes, rng);
}

template <typename S>
typename FmeHead<S>::Output FmeHead<S>::forward(const Context<S>& ctx, Var<S> fused) const {
  Var<S> pooled = global_avg_pool(fused);
  Var<S> x = pooled;
  if (ctx.training() && dropout > 0.0) {
    if (!ctx.rng) throw UsageError("training forward needs a dropout generator");
    x = rsfme::dropout(x, static_cast<S>(dropout), *ctx.rng);
  }
  return {pooled, fc.forward(ctx, x)};
}

template <typename S>
RsFmeModel<S>::RsFmeModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  swint_ = SwinBackbone<S>(params_, "swint", cfg_.swin, rng);
  if (uses_residual(cfg_.variant)) residual_.emplace(params_, "residual", cfg_.branches, rng);
  if (uses_spatial(cfg_.variant)) spatial_.emplace(params_, "spatial", cfg_.branches, rng);
  head_ = FmeHead<S>(params_, "head", cfg_.fused_channels(), cfg_.classes, cfg_.dropout, rng);
}

template <typename S>
ModelOutput<S> RsFmeModel<S>::forward(const Context<S>& ctx, Var<S> images) {
  const Nchw s = nchw(images.value());
  if (s.c != cfg_.swin.channels || s.h != cfg_.image() || s.w != cfg_.image()) {
    throw ShapeError("model expects [B, " + std::to_string(cfg_.swin.channels) + ", " +
                     std::to_string(cfg_.image()) + ", " + std::to_string(cfg_.image()) + "], got " +
                     shape_string(images.shape()));
  }
  Var<S> swint = swint_.forward(ctx, images).grid;
  std::optional<Var<S>> residual, spatial;
  if (residual_) residual = residual_->forward(ctx, images);
  if (spatial_) spatial = spatial_->forward(ctx, images).aligned;
  Var<S> fused = fuse(swint, residual ? &*residual : nullptr, spatial ? &*spatial : nullptr);
  auto head = head_.forward(ctx, fused);
  return {fused, head.pooled, head.logits};
}

template <typename S>
Tensor<S> RsFmeModel<S>::predict(const Tensor<S>& images) {
  Tape<S> tape;
  Context<S> ctx{tape, Mode::kInfer};
  return softmax(forward(ctx, tape.constant(images)).logits).value();
}

template Var<float> fuse(Var<float>, const Var<float>*, const Var<float>*);
template Var<double> fuse(Var<double>, const Var<double>*, const Var<double>*);
template class FmeHead<float>;
template class FmeHead<double>;
template class RsFmeModel<float>;
template class RsFmeModel<double>;

}  // namespace rsfme
