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

#include "rsfme/swint.hpp"

#include <algorithm>

namespace rsfme {

void SwinConfig::validate() const {
  auto fail = [](const std::string& what) { throw UsageError("swint: " + what); };
  if (image < 1 || channels < 1 || patch < 1 || dim < 1 || heads < 1 || depth < 0) {
    fail("sizes must be positive");
  }
  if (image % patch != 0) {
    fail("patch " + std::to_string(patch) + " does not divide image " + std::to_string(image));
  }
  if (dim % heads != 0) {
    fail("heads " + std::to_string(heads) + " do not divide dim " + std::to_string(dim));
  }
  if (window < 1 || shift < 0 || shift >= window) fail("need 0 <= shift < window");
}

std::vector<std::vector<Index>> window_index_sets(Index grid, Index window, Index shift) {
  if (grid < 1 || window < 1 || shift < 0 || shift >= window) {
    throw ShapeError("window_index_sets: need grid >= 1 and 0 <= shift < window");
  }
  std::vector<std::vector<Index>> sets;
  for (Index wy = 0; wy < grid; wy += window) {
    for (Index wx = 0; wx < grid; wx += window) {
      std::vector<Index> ids;
      for (Index r = wy; r < std::min(wy + window, grid); ++r) {
        for (Index c = wx; c < std::min(wx + window, grid); ++c) {
          ids.push_back(((r + shift) % grid) * grid + (c + shift) % grid);
        }
      }
      sets.push_back(std::move(ids));
    }
  }
  return sets;
}

template <typename S>
std::vector<Tensor<S>> window_partition(const Tensor<S>& tokens, Index grid, Index window, Index shift) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid * grid) {
    throw ShapeError("window_partition: expected " + std::to_string(grid * grid) + " tokens, got " +
                     shape_string(tokens.shape()));
  }
  std::vector<Tensor<S>> out;
  for (const auto& ids : window_index_sets(grid, window, shift)) {
    Tensor<S> w({static_cast<Index>(ids.size()), tokens.dim(1)});
    for (std::size_t i = 0; i < ids.size(); ++i) w.matrix().row(static_cast<Index>(i)) = tokens.matrix().row(ids[i]);
    out.push_back(std::move(w));
  }
  return out;
}

template <typename S>
Tensor<S> window_reverse(const std::vector<Tensor<S>>& windows, Index grid, Index window, Index shift) {
  const auto sets = window_index_sets(grid, window, shift);
  if (windows.size() != sets.size() || windows.empty()) throw ShapeError("window_reverse: window count mismatch");
  Tensor<S> out({grid * grid, windows.front().dim(1)});
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (windows[k].dim(0) != static_cast<Index>(sets[k].size())) {
      throw ShapeError("window_reverse: window " + std::to_string(k) + " has the wrong size");
    }
    for (std::size_t i = 0; i < sets[k].size(); ++i) {
      out.matrix().row(sets[k][i]) = windows[k].matrix().row(static_cast<Index>(i));
    }
  }
  return out;
}

std::shared_ptr<const std::vector<AttentionGroup>> swin_attention_groups(Index batch, Index grid,
                                                                         Index window, Index shift) {
  const auto sets = window_index_sets(grid, window, shift);
  const Index stride = grid * grid + 1;
  auto groups = std::make_shared<std::vector<AttentionGroup>>();
  for (Index b = 0; b < batch; ++b) {
    const Index base = b * stride;
    AttentionGroup global;
    global.queries = {base};
    for (Index t = 0; t < stride; ++t) global.keys.push_back(base + t);
    groups->push_back(std::move(global));
    for (const auto& ids : sets) {
      AttentionGroup g;
      g.keys.push_back(base);
      for (Index t : ids) {
        g.queries.push_back(base + 1 + t);
        g.keys.push_back(base + 1 + t);
      }
      groups->push_back(std::move(g));
    }
  }
  return groups;
}

template <typename S>
Var<S> tokens_to_grid(Var<S> tokens, Index batch, Index grid) {
  const Index n = grid * grid, width = tokens.dim(-1);
  if (tokens.rank() != 2 || tokens.dim(0) != batch * (n + 1)) {
    throw ShapeError("tokens_to_grid: " + shape_string(tokens.shape()) + " is not " +
                     std::to_string(batch) + " images of " + std::to_string(n + 1) + " tokens");
  }
  std::vector<Index> sources;
  sources.reserve(static_cast<std::size_t>(batch * width * n));
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < width; ++c)
      for (Index t = 0; t < n; ++t) sources.push_back((b * (n + 1) + 1 + t) * width + c);
  return gather_elements(tokens, sources, {batch, width, grid, grid});
}

template <typename S>
Var<S> grid_to_tokens(Var<S> grid) {
  const Nchw s = nchw(grid.value());
  const Index n = s.h * s.w;
  std::vector<Index> sources, rows;
  for (Index b = 0; b < s.n; ++b)
    for (Index t = 0; t < n; ++t) {
      rows.push_back(b * (n + 1) + 1 + t);
      for (Index c = 0; c < s.c; ++c) sources.push_back((b * s.c + c) * n + t);
    }
  return scatter_rows(gather_elements(grid, sources, {s.n * n, s.c}), rows, s.n * (n + 1));
}

template <typename S>
PatchEmbed<S>::PatchEmbed(ParameterStore<S>& store, const std::string& name, const SwinConfig& c, Rng& rng)
    : cfg(c) {
  cfg.validate();
  proj = Linear<S>(store, name + ".proj", cfg.patch * cfg.patch * cfg.channels, cfg.dim, rng);
  class_token = &store.add(name + ".class_token", truncated_normal<S>({1, cfg.dim}, 0.02, rng));
  position = &store.add(name + ".position", Tensor<S>({cfg.patches() + 1, cfg.dim}));
}

template <typename S>
Var<S> PatchEmbed<S>::forward(const Context<S>& ctx, Var<S> images) const {
  const Nchw s = nchw(images.value());
  if (s.c != cfg.channels || s.h != cfg.image || s.w != cfg.image) {
    throw ShapeError("patch_embed: expected [B, " + std::to_string(cfg.channels) + ", " +
                     std::to_string(cfg.image) + ", " + std::to_string(cfg.image) + "], got " +
                     shape_string(images.shape()));
  }
  const Index g = cfg.grid(), p = cfg.patch, n = cfg.patches(), flat = p * p * s.c;
  // Patch vectors are row-major over the grid and (py, px, c) within a patch.
  std::vector<Index> sources;
  sources.reserve(static_cast<std::size_t>(s.n * n * flat));
  for (Index b = 0; b < s.n; ++b)
    for (Index gy = 0; gy < g; ++gy)
      for (Index gx = 0; gx < g; ++gx)
        for (Index py = 0; py < p; ++py)
          for (Index px = 0; px < p; ++px)
            for (Index c = 0; c < s.c; ++c)
              sources.push_back(((b * s.c + c) * s.h + gy * p + py) * s.w + gx * p + px);
  Var<S> projected = proj.forward(ctx, gather_elements(images, sources, {s.n * n, flat}));

  std::vector<Index> patch_rows, class_rows, position_rows, zeros(static_cast<std::size_t>(s.n), 0);
  for (Index b = 0; b < s.n; ++b) {
    class_rows.push_back(b * (n + 1));
    for (Index t = 0; t <= n; ++t) position_rows.push_back(t);
    for (Index t = 0; t < n; ++t) patch_rows.push_back(b * (n + 1) + 1 + t);
  }
  const Index total = s.n * (n + 1);
  Var<S> tokens = add(scatter_rows(projected, patch_rows, total),
                      scatter_rows(gather_rows(ctx.param(*class_token), zeros), class_rows, total));
  return add(tokens, gather_rows(ctx.param(*position), position_rows));
}

template <typename S>
WindowAttention<S>::WindowAttention(ParameterStore<S>& store, const std::string& name, const SwinConfig& c,
                                    bool shift, Rng& rng)
    : cfg(c), shifted(shift) {
  norm = LayerNorm<S>(store, name + ".norm", cfg.dim);
  query = Linear<S>(store, name + ".query", cfg.dim, cfg.dim, rng);
  key = Linear<S>(store, name + ".key", cfg.dim, cfg.dim, rng);
  value = Linear<S>(store, name + ".value", cfg.dim, cfg.dim, rng);
  out = Linear<S>(store, name + ".out", cfg.dim, cfg.dim, rng);
}

template <typename S>
Var<S> WindowAttention<S>::forward(const Context<S>& ctx, Var<S> tokens) const {
  const Index batch = tokens.dim(0) / (cfg.patches() + 1);
  Var<S> x = norm.forward(ctx, tokens);
  auto groups = swin_attention_groups(batch, cfg.grid(), cfg.window, shifted ? cfg.shift : 0);
  Var<S> attended = grouped_attention(query.forward(ctx, x), key.forward(ctx, x), value.forward(ctx, x),
                                      cfg.heads, std::move(groups));
  return add(out.forward(ctx, attended), tokens);
}

template <typename S>
InverseResidualBlock<S>::InverseResidualBlock(ParameterStore<S>& store, const std::string& name,
                                              const SwinConfig& c, Rng& rng)
    : cfg(c) {
  const Index wide = kExpansion * cfg.dim;
  expand = Linear<S>(store, name + ".expand", cfg.dim, wide, rng);
  expand_norm = BatchNorm<S>(store, name + ".expand_norm", wide);
  depthwise = Conv2d<S>(store, name + ".depthwise", ConvSpec{3, 3, 1, 1, wide, wide, wide}, rng);
  project = Linear<S>(store, name + ".project", wide, cfg.dim, rng);
  project_norm = BatchNorm<S>(store, name + ".project_norm", cfg.dim);
}

template <typename S>
Var<S> InverseResidualBlock<S>::forward(const Context<S>& ctx, Var<S> tokens) {
  const Index batch = tokens.dim(0) / (cfg.patches() + 1);
  Var<S> h = expand_norm.forward(ctx, gelu(expand.forward(ctx, tokens)));
  Var<S> spatial = depthwise.forward(ctx, tokens_to_grid(h, batch, cfg.grid()));
  h = add(grid_to_tokens(spatial), h);
  return project_norm.forward(ctx, project.forward(ctx, h));
}

template <typename S>
TransformerBlock<S>::TransformerBlock(ParameterStore<S>& store, const std::string& name, const SwinConfig& cfg,
                                      bool shifted, Rng& rng) {
  attention = WindowAttention<S>(store, name + ".attention", cfg, shifted, rng);
  norm = LayerNorm<S>(store, name + ".norm", cfg.dim);
  irb = InverseResidualBlock<S>(store, name + ".irb", cfg, rng);
}

template <typename S>
Var<S> TransformerBlock<S>::forward(const Context<S>& ctx, Var<S> tokens) {
  Var<S> m = attention.forward(ctx, tokens);
  return add(irb.forward(ctx, norm.forward(ctx, m)), m);
}

template <typename S>
SwinBackbone<S>::SwinBackbone(ParameterStore<S>& store, const std::string& name, const SwinConfig& c, Rng& rng)
    : cfg(c) {
  embed = PatchEmbed<S>(store, name + ".embed", cfg, rng);
  for (Index i = 0; i < cfg.depth; ++i) {
    blocks.emplace_back(store, name + ".block" + std::to_string(i), cfg, i % 2 == 1, rng);
  }
  norm = LayerNorm<S>(store, name + ".norm", cfg.dim);
}

template <typename S>
BackboneOutput<S> SwinBackbone<S>::forward(const Context<S>& ctx, Var<S> images) {
  Var<S> tokens = embed.forward(ctx, images);
  for (auto& block : blocks) tokens = block.forward(ctx, tokens);
  tokens = norm.forward(ctx, tokens);
  const Index batch = images.dim(0), n = cfg.patches();
  std::vector<Index> class_rows;
  for (Index b = 0; b < batch; ++b) class_rows.push_back(b * (n + 1));
  return {tokens_to_grid(tokens, batch, cfg.grid()), gather_rows(tokens, class_rows)};
}

Index swin_parameter_count(const SwinConfig& cfg) {
  const Index d = cfg.dim, n = cfg.patches();
  const Index embed = cfg.patch * cfg.patch * cfg.channels * d + d  // projection
                      + d                                          // class token
                      + (n + 1) * d;                               // positions
  const Index block = 2 * d                  // attention norm
                      + 4 * (d * d + d)      // q, k, v, out
                      + 2 * d                // irb norm
                      + (4 * d * d + 4 * d)  // expand
                      + 2 * 4 * d            // expand batch norm
                      + (9 * 4 * d + 4 * d)  // depthwise 3x3
                      + (4 * d * d + d)      // project
                      + 2 * d;               // project batch norm
  return embed + cfg.depth * block + 2 * d;
}

#define RSFME_INSTANTIATE_SWIN(S)                                                                 \
  template std::vector<Tensor<S>> window_partition(const Tensor<S>&, Index, Index, Index);         \
  template Tensor<S> window_reverse(const std::vector<Tensor<S>>&, Index, Index, Index);          \
  template Var<S> tokens_to_grid(Var<S>, Index, Index);                                           \
  template Var<S> grid_to_tokens(Var<S>);                                                         \
  template class PatchEmbed<S>;                                                                   \
  template class WindowAttention<S>;                                                              \
  template class InverseResidualBlock<S>;                                                         \
  template class TransformerBlock<S>;                                                             \
  template class SwinBackbone<S>;

RSFME_INSTANTIATE_SWIN(float)
RSFME_INSTANTIATE_SWIN(double)

}  // namespace rsfme
