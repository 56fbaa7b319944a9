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

#include "rsfme/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace rsfme {

namespace {

template <typename S>
using Grads = std::span<Tensor<S>* const>;

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Index last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  Index outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, Index axis) {
  AxisSplit r{1, s.at(static_cast<std::size_t>(axis)), 1};
  for (Index i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename S>
void im2col(const S* image, Index channels, Index height, Index width, const ConvSpec& spec,
            Index out_h, Index out_w, S* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < spec.kernel_h; ++ky) {
      for (Index kx = 0; kx < spec.kernel_w; ++kx) {
        S* row = col + ((c * spec.kernel_h + ky) * spec.kernel_w + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * spec.stride - spec.pad + ky;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * spec.stride - spec.pad + kx;
            row[oy * out_w + ox] = (iy >= 0 && iy < height && ix >= 0 && ix < width)
                                       ? image[(c * height + iy) * width + ix]
                                       : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, Index channels, Index height, Index width, const ConvSpec& spec,
            Index out_h, Index out_w, S* image) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < spec.kernel_h; ++ky) {
      for (Index kx = 0; kx < spec.kernel_w; ++kx) {
        const S* row = col + ((c * spec.kernel_h + ky) * spec.kernel_w + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * spec.stride - spec.pad + kx;
            if (ix >= 0 && ix < width) image[(c * height + iy) * width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Index ConvSpec::output_extent(Index in, Index kernel) const {
  if (stride < 1 || pad < 0) throw ShapeError("conv: stride must be >= 1 and pad >= 0");
  const Index span = in + 2 * pad - kernel;
  if (span < 0) {
    throw ShapeError("conv/pool: window " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return span / stride + 1;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape(), (a.value().vec() + b.value().vec()).eval());
  return a.tape().record(std::move(out), {a, b}, [](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (gr[0]) gr[0]->vec() += g.vec();
    if (gr[1]) gr[1]->vec() += g.vec();
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape(), (a.value().vec() - b.value().vec()).eval());
  return a.tape().record(std::move(out), {a, b}, [](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (gr[0]) gr[0]->vec() += g.vec();
    if (gr[1]) gr[1]->vec() -= g.vec();
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape(), a.value().vec().cwiseProduct(b.value().vec()).eval());
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (gr[0]) gr[0]->vec() += g.vec().cwiseProduct(b.value().vec());
    if (gr[1]) gr[1]->vec() += g.vec().cwiseProduct(a.value().vec());
  });
}

template <typename S>
Var<S> scale(Var<S> x, S factor) {
  Tensor<S> out(x.shape(), (x.value().vec() * factor).eval());
  return x.tape().record(std::move(out), {x}, [factor](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec() += g.vec() * factor;
  });
}

template <typename S>
Var<S> add_bias(Var<S> x, Var<S> bias) {
  const Index d = last_dim(x.shape());
  if (bias.value().size() != d) {
    throw ShapeError("add_bias: bias of size " + std::to_string(bias.value().size()) +
                     " for last axis " + std::to_string(d));
  }
  const Index rows = x.value().size() / d;
  Tensor<S> out = x.value();
  out.matrix(rows, d).rowwise() += bias.value().vec().transpose();
  return x.tape().record(std::move(out), {x, bias}, [rows, d](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (gr[0]) gr[0]->vec() += g.vec();
    if (gr[1]) gr[1]->vec() += g.matrix(rows, d).colwise().sum().transpose();
  });
}

template <typename S>
Var<S> affine_last_axis(Var<S> x, Var<S> gamma, Var<S> beta) {
  const Index d = last_dim(x.shape());
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw ShapeError("affine_last_axis: parameter size does not match last axis");
  }
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  auto xm = x.value().matrix(rows, d);
  out.matrix(rows, d) = (xm.array().rowwise() * gamma.value().vec().transpose().array()).matrix();
  out.matrix(rows, d).rowwise() += beta.value().vec().transpose();
  return x.tape().record(
      std::move(out), {x, gamma, beta}, [x, gamma, rows, d](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
        auto gm = g.matrix(rows, d);
        if (gr[0]) {
          gr[0]->matrix(rows, d) +=
              (gm.array().rowwise() * gamma.value().vec().transpose().array()).matrix();
        }
        if (gr[1]) {
          gr[1]->vec() +=
              gm.cwiseProduct(x.value().matrix(rows, d)).colwise().sum().transpose();
        }
        if (gr[2]) gr[2]->vec() += gm.colwise().sum().transpose();
      });
}

template <typename S>
Var<S> affine_channels(Var<S> x, Var<S> gamma, Var<S> beta) {
  if (x.rank() < 2) throw ShapeError("affine_channels: need [N, C, ...]");
  const AxisSplit sp = split_axis(x.shape(), 1);
  if (gamma.value().size() != sp.extent || beta.value().size() != sp.extent) {
    throw ShapeError("affine_channels: parameter size does not match channel count");
  }
  Tensor<S> out(x.shape());
  const S* xv = x.value().data();
  const S* gv = gamma.value().data();
  const S* bv = beta.value().data();
  for (Index n = 0; n < sp.outer; ++n)
    for (Index c = 0; c < sp.extent; ++c) {
      const Index base = (n * sp.extent + c) * sp.inner;
      for (Index i = 0; i < sp.inner; ++i) out[base + i] = xv[base + i] * gv[c] + bv[c];
    }
  return x.tape().record(std::move(out), {x, gamma, beta}, [x, gamma, sp](const Tensor<S>&, const Tensor<S>& g,
                                                                         Grads<S> gr) {
    const S* xv = x.value().data();
    const S* gv = gamma.value().data();
    for (Index n = 0; n < sp.outer; ++n)
      for (Index c = 0; c < sp.extent; ++c) {
        const Index base = (n * sp.extent + c) * sp.inner;
        S dg = 0, db = 0;
        for (Index i = 0; i < sp.inner; ++i) {
          const S go = g[base + i];
          if (gr[0]) (*gr[0])[base + i] += go * gv[c];
          dg += go * xv[base + i];
          db += go;
        }
        if (gr[1]) (*gr[1])[c] += dg;
        if (gr[2]) (*gr[2])[c] += db;
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Var<S> sum(Var<S> x) {
  Tensor<S> out = Tensor<S>::scalar(x.value().vec().sum());
  return x.tape().record(std::move(out), {x}, [](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec().array() += g[0];
  });
}

template <typename S>
Var<S> mean(Var<S> x) {
  const S n = static_cast<S>(x.value().size());
  Tensor<S> out = Tensor<S>::scalar(x.value().vec().sum() / n);
  return x.tape().record(std::move(out), {x}, [n](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec().array() += g[0] / n;
  });
}

template <typename S>
Var<S> weighted_sum(Var<S> x, const Tensor<S>& weights) {
  if (weights.shape() != x.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  Tensor<S> out = Tensor<S>::scalar(x.value().vec().dot(weights.vec()));
  return x.tape().record(std::move(out), {x}, [weights](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec() += weights.vec() * g[0];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                     shape_string(b.shape()));
  }
  Tensor<S> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (gr[0]) gr[0]->matrix().noalias() += g.matrix() * b.value().matrix().transpose();
    if (gr[1]) gr[1]->matrix().noalias() += a.value().matrix().transpose() * g.matrix();
  });
}

template <typename S>
Var<S> transpose(Var<S> x) {
  if (x.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  Tensor<S> out({x.dim(1), x.dim(0)});
  out.matrix() = x.value().matrix().transpose();
  return x.tape().record(std::move(out), {x}, [](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->matrix() += g.matrix().transpose();
  });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  Tensor<S> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec() += g.vec();
  });
}

template <typename S>
Var<S> gather_elements(Var<S> x, const std::vector<Index>& sources, Shape out_shape) {
  if (shape_size(out_shape) != static_cast<Index>(sources.size())) {
    throw ShapeError("gather_elements: index count does not match output shape");
  }
  const Index n = x.value().size();
  Tensor<S> out(std::move(out_shape));
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k] < 0 || sources[k] >= n) throw ShapeError("gather_elements: index out of range");
    out[static_cast<Index>(k)] = x.value()[sources[k]];
  }
  return x.tape().record(std::move(out), {x}, [sources](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    for (std::size_t k = 0; k < sources.size(); ++k) (*gr[0])[sources[k]] += g[static_cast<Index>(k)];
  });
}

template <typename S>
Var<S> permute(Var<S> x, std::vector<Index> axes) {
  const Shape& in = x.shape();
  const Index r = x.rank();
  if (static_cast<Index>(axes.size()) != r) throw ShapeError("permute: axis count mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    const Index a = axes[static_cast<std::size_t>(i)];
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) throw ShapeError("permute: bad axes");
    seen[static_cast<std::size_t>(a)] = true;
    out_shape[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(a)];
  }
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * in[static_cast<std::size_t>(i + 1)];
  }
  const Index n = x.value().size();
  std::vector<Index> sources(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  for (Index k = 0; k < n; ++k) {
    Index src = 0;
    for (Index i = 0; i < r; ++i) {
      src += counter[static_cast<std::size_t>(i)] *
             in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    }
    sources[static_cast<std::size_t>(k)] = src;
    for (Index i = r - 1; i >= 0; --i) {
      if (++counter[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      counter[static_cast<std::size_t>(i)] = 0;
    }
  }
  return gather_elements(x, sources, std::move(out_shape));
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& xs, Index axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis < 0 || axis >= static_cast<Index>(first.size())) throw ShapeError("concat: bad axis");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<Index>(i) != axis && s[i] != first[i]) {
        throw ShapeError("concat: extent mismatch " + shape_string(s) + " vs " +
                         shape_string(first));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor<S> out(out_shape);
  std::vector<Index> extents;
  Index offset = 0;
  for (const auto& x : xs) {
    const Index e = x.dim(axis);
    extents.push_back(e);
    for (Index o = 0; o < sp.outer; ++o) {
      out.vec().segment((o * sp.extent + offset) * sp.inner, e * sp.inner) =
          x.value().vec().segment(o * e * sp.inner, e * sp.inner);
    }
    offset += e;
  }
  return xs.front().tape().record(std::move(out), xs, [sp, extents](const Tensor<S>&, const Tensor<S>& g,
                                                                   Grads<S> gr) {
    Index offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const Index e = extents[k];
      if (gr[k]) {
        for (Index o = 0; o < sp.outer; ++o) {
          gr[k]->vec().segment(o * e * sp.inner, e * sp.inner) +=
              g.vec().segment((o * sp.extent + offset) * sp.inner, e * sp.inner);
        }
      }
      offset += e;
    }
  });
}

template <typename S>
Var<S> slice(Var<S> x, Index axis, Index begin, Index count) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("slice: bad axis");
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (begin < 0 || count < 1 || begin + count > sp.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside extent " +
                     std::to_string(sp.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = count;
  Tensor<S> out(out_shape);
  for (Index o = 0; o < sp.outer; ++o) {
    out.vec().segment(o * count * sp.inner, count * sp.inner) =
        x.value().vec().segment((o * sp.extent + begin) * sp.inner, count * sp.inner);
  }
  return x.tape().record(std::move(out), {x}, [sp, begin, count](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    for (Index o = 0; o < sp.outer; ++o) {
      gr[0]->vec().segment((o * sp.extent + begin) * sp.inner, count * sp.inner) +=
          g.vec().segment(o * count * sp.inner, count * sp.inner);
    }
  });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
  for (const auto& x : xs) {
    if (x.rank() < 2) throw ShapeError("concat_channels: need [N, C, ...] inputs");
  }
  return concat(xs, 1);
}

template <typename S>
Var<S> gather_rows(Var<S> x, const std::vector<Index>& rows) {
  if (x.rank() < 1 || rows.empty()) throw ShapeError("gather_rows: empty selection");
  const Index width = x.value().size() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Tensor<S> out(out_shape);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.dim(0)) throw ShapeError("gather_rows: row out of range");
    out.vec().segment(static_cast<Index>(k) * width, width) =
        x.value().vec().segment(rows[k] * width, width);
  }
  return x.tape().record(std::move(out), {x}, [rows, width](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gr[0]->vec().segment(rows[k] * width, width) +=
          g.vec().segment(static_cast<Index>(k) * width, width);
    }
  });
}

template <typename S>
Var<S> scatter_rows(Var<S> x, const std::vector<Index>& rows, Index total_rows) {
  if (static_cast<Index>(rows.size()) != x.dim(0)) {
    throw ShapeError("scatter_rows: one target row per input row required");
  }
  const Index width = x.value().size() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = total_rows;
  Tensor<S> out(out_shape);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= total_rows) throw ShapeError("scatter_rows: row out of range");
    out.vec().segment(rows[k] * width, width) +=
        x.value().vec().segment(static_cast<Index>(k) * width, width);
  }
  return x.tape().record(std::move(out), {x}, [rows, width](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gr[0]->vec().segment(static_cast<Index>(k) * width, width) +=
          g.vec().segment(rows[k] * width, width);
    }
  });
}

// ---------------------------------------------------------------------------
// Activations and normalization

template <typename S>
Var<S> relu(Var<S> x) {
  Tensor<S> out(x.shape(), x.value().vec().cwiseMax(S(0)).eval());
  return x.tape().record(std::move(out), {x}, [x](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec().array() += (x.value().vec().array() > S(0)).select(g.vec().array(), S(0));
  });
}

template <typename S>
Var<S> gelu(Var<S> x) {
  const S inv_sqrt2 = static_cast<S>(1.0 / std::numbers::sqrt2);
  Tensor<S> out(x.shape());
  for (Index i = 0; i < out.size(); ++i) {
    const S v = x.value()[i];
    out[i] = v * S(0.5) * std::erfc(-v * inv_sqrt2);
  }
  return x.tape().record(std::move(out), {x}, [x, inv_sqrt2](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    const S inv_sqrt_2pi = static_cast<S>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    for (Index i = 0; i < g.size(); ++i) {
      const S v = x.value()[i];
      const S cdf = S(0.5) * std::erfc(-v * inv_sqrt2);
      const S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * v * v);
      (*gr[0])[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename S>
Var<S> softmax(Var<S> x) {
  const Index d = last_dim(x.shape());
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  auto xm = x.value().matrix(rows, d);
  auto om = out.matrix(rows, d);
  for (Index r = 0; r < rows; ++r) {
    om.row(r) = (xm.row(r).array() - xm.row(r).maxCoeff()).exp().matrix();
    om.row(r) /= om.row(r).sum();
  }
  return x.tape().record(std::move(out), {x}, [rows, d](const Tensor<S>& y, const Tensor<S>& g,
                                                        Grads<S> gr) {
    auto ym = y.matrix(rows, d);
    auto gm = g.matrix(rows, d);
    for (Index r = 0; r < rows; ++r) {
      const S dot = gm.row(r).dot(ym.row(r));
      gr[0]->matrix(rows, d).row(r) += (ym.row(r).array() * (gm.row(r).array() - dot)).matrix();
    }
  });
}

template <typename S>
Var<S> log_softmax(Var<S> x) {
  const Index d = last_dim(x.shape());
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  auto xm = x.value().matrix(rows, d);
  auto om = out.matrix(rows, d);
  for (Index r = 0; r < rows; ++r) {
    const S m = xm.row(r).maxCoeff();
    const S lse = m + std::log((xm.row(r).array() - m).exp().sum());
    om.row(r) = (xm.row(r).array() - lse).matrix();
  }
  Tensor<S> probs(out.shape(), out.vec().array().exp().matrix().eval());
  return x.tape().record(std::move(out), {x}, [probs, rows, d](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    auto pm = probs.matrix(rows, d);
    auto gm = g.matrix(rows, d);
    for (Index r = 0; r < rows; ++r) {
      gr[0]->matrix(rows, d).row(r) += gm.row(r) - pm.row(r) * gm.row(r).sum();
    }
  });
}

template <typename S>
Var<S> layer_norm(Var<S> x, S eps) {
  const Index d = last_dim(x.shape());
  const Index rows = x.value().size() / d;
  Tensor<S> out(x.shape());
  Tensor<S> inv_std({rows});
  auto xm = x.value().matrix(rows, d);
  auto om = out.matrix(rows, d);
  for (Index r = 0; r < rows; ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    om.row(r) = ((xm.row(r).array() - mu) * inv_std[r]).matrix();
  }
  return x.tape().record(std::move(out), {x}, [inv_std, rows, d](const Tensor<S>& y,
                                                                 const Tensor<S>& g, Grads<S> gr) {
    auto ym = y.matrix(rows, d);
    auto gm = g.matrix(rows, d);
    for (Index r = 0; r < rows; ++r) {
      const S gmean = gm.row(r).mean();
      const S gy = gm.row(r).dot(ym.row(r)) / static_cast<S>(d);
      gr[0]->matrix(rows, d).row(r) +=
          (inv_std[r] * (gm.row(r).array() - gmean - ym.row(r).array() * gy)).matrix();
    }
  });
}

template <typename S>
Var<S> batch_norm(Var<S> x, S eps, NormStats<S>* stats) {
  if (x.rank() < 2) throw ShapeError("batch_norm: need [N, C, ...]");
  const AxisSplit sp = split_axis(x.shape(), 1);
  const Index m = sp.outer * sp.inner;
  Tensor<S> mu({sp.extent}), var({sp.extent}), inv_std({sp.extent});
  const S* xv = x.value().data();
  for (Index c = 0; c < sp.extent; ++c) {
    S s = 0;
    for (Index n = 0; n < sp.outer; ++n)
      for (Index i = 0; i < sp.inner; ++i) s += xv[(n * sp.extent + c) * sp.inner + i];
    mu[c] = s / static_cast<S>(m);
    S q = 0;
    for (Index n = 0; n < sp.outer; ++n)
      for (Index i = 0; i < sp.inner; ++i) {
        const S dlt = xv[(n * sp.extent + c) * sp.inner + i] - mu[c];
        q += dlt * dlt;
      }
    var[c] = q / static_cast<S>(m);
    inv_std[c] = S(1) / std::sqrt(var[c] + eps);
  }
  Tensor<S> out(x.shape());
  for (Index n = 0; n < sp.outer; ++n)
    for (Index c = 0; c < sp.extent; ++c)
      for (Index i = 0; i < sp.inner; ++i) {
        const Index k = (n * sp.extent + c) * sp.inner + i;
        out[k] = (xv[k] - mu[c]) * inv_std[c];
      }
  if (stats) *stats = {mu, var};
  return x.tape().record(std::move(out), {x}, [inv_std, sp, m](const Tensor<S>& y,
                                                               const Tensor<S>& g, Grads<S> gr) {
    const S* yv = y.data();
    for (Index c = 0; c < sp.extent; ++c) {
      S gsum = 0, gy = 0;
      for (Index n = 0; n < sp.outer; ++n)
        for (Index i = 0; i < sp.inner; ++i) {
          const Index k = (n * sp.extent + c) * sp.inner + i;
          gsum += g[k];
          gy += g[k] * yv[k];
        }
      const S gmean = gsum / static_cast<S>(m);
      const S gymean = gy / static_cast<S>(m);
      for (Index n = 0; n < sp.outer; ++n)
        for (Index i = 0; i < sp.inner; ++i) {
          const Index k = (n * sp.extent + c) * sp.inner + i;
          (*gr[0])[k] += inv_std[c] * (g[k] - gmean - yv[k] * gymean);
        }
    }
  });
}

template <typename S>
Var<S> batch_norm_fixed(Var<S> x, const NormStats<S>& stats, S eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm_fixed: need [N, C, ...]");
  const AxisSplit sp = split_axis(x.shape(), 1);
  if (stats.mean.size() != sp.extent || stats.var.size() != sp.extent) {
    throw ShapeError("batch_norm_fixed: statistics do not match channel count");
  }
  Tensor<S> inv_std({sp.extent});
  for (Index c = 0; c < sp.extent; ++c) inv_std[c] = S(1) / std::sqrt(stats.var[c] + eps);
  Tensor<S> out(x.shape());
  for (Index n = 0; n < sp.outer; ++n)
    for (Index c = 0; c < sp.extent; ++c)
      for (Index i = 0; i < sp.inner; ++i) {
        const Index k = (n * sp.extent + c) * sp.inner + i;
        out[k] = (x.value()[k] - stats.mean[c]) * inv_std[c];
      }
  return x.tape().record(std::move(out), {x}, [inv_std, sp](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    for (Index n = 0; n < sp.outer; ++n)
      for (Index c = 0; c < sp.extent; ++c)
        for (Index i = 0; i < sp.inner; ++i) {
          const Index k = (n * sp.extent + c) * sp.inner + i;
          (*gr[0])[k] += g[k] * inv_std[c];
        }
  });
}

template <typename S>
Var<S> dropout(Var<S> x, S rate, std::mt19937_64& rng) {
  if (!(rate >= S(0) && rate < S(1))) throw ShapeError("dropout: rate must be in [0, 1)");
  if (rate == S(0)) return x;
  const S keep_scale = S(1) / (S(1) - rate);
  Tensor<S> mask(x.shape());
  for (Index i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u >= static_cast<double>(rate) ? keep_scale : S(0);
  }
  Tensor<S> out(x.shape(), x.value().vec().cwiseProduct(mask.vec()).eval());
  return x.tape().record(std::move(out), {x}, [mask](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    gr[0]->vec() += g.vec().cwiseProduct(mask.vec());
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace {

template <typename S>
struct ConvGeometry {
  Index n, c, h, w, k, out_h, out_w, cg, kg, patch;
};

template <typename S>
ConvGeometry<S> conv_geometry(const Var<S>& x, const Var<S>& weight, const ConvSpec& spec) {
  const Nchw in = nchw(x.value());
  if (in.c != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (spec.groups < 1 || spec.in_channels % spec.groups || spec.out_channels % spec.groups) {
    throw ShapeError("conv2d: groups must divide in and out channels");
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_string(weight.shape()) + ", expected " +
                     shape_string(spec.weight_shape()));
  }
  ConvGeometry<S> g{};
  g.n = in.n;
  g.c = in.c;
  g.h = in.h;
  g.w = in.w;
  g.k = spec.out_channels;
  g.out_h = spec.output_extent(in.h, spec.kernel_h);
  g.out_w = spec.output_extent(in.w, spec.kernel_w);
  g.cg = spec.in_channels / spec.groups;
  g.kg = spec.out_channels / spec.groups;
  g.patch = g.cg * spec.kernel_h * spec.kernel_w;
  return g;
}

template <typename S>
using RowMat = typename Tensor<S>::RowMatrix;

}  // namespace

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, const ConvSpec& spec) {
  const ConvGeometry<S> geo = conv_geometry(x, weight, spec);
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().size() != geo.k) throw ShapeError("conv2d: bias size mismatch");
  const Index plane = geo.out_h * geo.out_w;
  Tensor<S> out({geo.n, geo.k, geo.out_h, geo.out_w});
  const S* xv = x.value().data();
  const S* wv = weight.value().data();
  RowMat<S> col(geo.patch, plane);
  for (Index n = 0; n < geo.n; ++n) {
    for (Index grp = 0; grp < spec.groups; ++grp) {
      im2col(xv + (n * geo.c + grp * geo.cg) * geo.h * geo.w, geo.cg, geo.h, geo.w, spec,
             geo.out_h, geo.out_w, col.data());
      Eigen::Map<const RowMat<S>> wg(wv + grp * geo.kg * geo.patch, geo.kg, geo.patch);
      Eigen::Map<RowMat<S>> og(out.data() + (n * geo.k + grp * geo.kg) * plane, geo.kg, plane);
      og.noalias() = wg * col;
    }
    if (has_bias) {
      Eigen::Map<RowMat<S>> on(out.data() + n * geo.k * plane, geo.k, plane);
      on.colwise() += bias.value().vec();
    }
  }
  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.tape().record(
      std::move(out), inputs, [x, weight, spec, geo, has_bias](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
        const Index plane = geo.out_h * geo.out_w;
        const S* xv = x.value().data();
        const S* wv = weight.value().data();
        RowMat<S> col(geo.patch, plane);
        RowMat<S> dcol(geo.patch, plane);
        for (Index n = 0; n < geo.n; ++n) {
          for (Index grp = 0; grp < spec.groups; ++grp) {
            Eigen::Map<const RowMat<S>> gg(g.data() + (n * geo.k + grp * geo.kg) * plane, geo.kg,
                                           plane);
            if (gr[1]) {
              im2col(xv + (n * geo.c + grp * geo.cg) * geo.h * geo.w, geo.cg, geo.h, geo.w, spec,
                     geo.out_h, geo.out_w, col.data());
              Eigen::Map<RowMat<S>> dw(gr[1]->data() + grp * geo.kg * geo.patch, geo.kg,
                                       geo.patch);
              dw.noalias() += gg * col.transpose();
            }
            if (gr[0]) {
              Eigen::Map<const RowMat<S>> wg(wv + grp * geo.kg * geo.patch, geo.kg, geo.patch);
              dcol.noalias() = wg.transpose() * gg;
              col2im(dcol.data(), geo.cg, geo.h, geo.w, spec, geo.out_h, geo.out_w,
                     gr[0]->data() + (n * geo.c + grp * geo.cg) * geo.h * geo.w);
            }
          }
          if (has_bias && gr[2]) {
            Eigen::Map<const RowMat<S>> gn(g.data() + n * geo.k * plane, geo.k, plane);
            gr[2]->vec() += gn.rowwise().sum();
          }
        }
      });
}

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, const ConvSpec& spec) {
  return conv2d(x, weight, Var<S>{}, spec);
}

template <typename S>
Var<S> pool2d(Var<S> x, const PoolSpec& spec) {
  const Nchw in = nchw(x.value());
  if (spec.size < 1 || spec.stride < 1) throw ShapeError("pool2d: size and stride must be >= 1");
  ConvSpec extent_rule;
  extent_rule.stride = spec.stride;
  extent_rule.pad = 0;
  const Index oh = extent_rule.output_extent(in.h, spec.size);
  const Index ow = extent_rule.output_extent(in.w, spec.size);
  Tensor<S> out({in.n, in.c, oh, ow});
  const S* xv = x.value().data();
  const bool is_max = spec.mode == PoolMode::kMax;
  std::vector<Index> argmax;
  if (is_max) argmax.resize(static_cast<std::size_t>(out.size()));
  const S inv_area = S(1) / static_cast<S>(spec.size * spec.size);
  for (Index p = 0; p < in.n * in.c; ++p) {
    const S* src = xv + p * in.h * in.w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Index o = (p * oh + oy) * ow + ox;
        if (is_max) {
          Index best = (oy * spec.stride) * in.w + ox * spec.stride;
          for (Index ky = 0; ky < spec.size; ++ky)
            for (Index kx = 0; kx < spec.size; ++kx) {
              const Index idx = (oy * spec.stride + ky) * in.w + ox * spec.stride + kx;
              if (src[idx] > src[best]) best = idx;
            }
          out[o] = src[best];
          argmax[static_cast<std::size_t>(o)] = p * in.h * in.w + best;
        } else {
          S s = 0;
          for (Index ky = 0; ky < spec.size; ++ky)
            for (Index kx = 0; kx < spec.size; ++kx)
              s += src[(oy * spec.stride + ky) * in.w + ox * spec.stride + kx];
          out[o] = s * inv_area;
        }
      }
  }
  return x.tape().record(std::move(out), {x}, [argmax, in, oh, ow, spec, is_max, inv_area](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    if (is_max) {
      for (std::size_t o = 0; o < argmax.size(); ++o) (*gr[0])[argmax[o]] += g[static_cast<Index>(o)];
      return;
    }
    for (Index p = 0; p < in.n * in.c; ++p)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          const S share = g[(p * oh + oy) * ow + ox] * inv_area;
          for (Index ky = 0; ky < spec.size; ++ky)
            for (Index kx = 0; kx < spec.size; ++kx)
              (*gr[0])[p * in.h * in.w + (oy * spec.stride + ky) * in.w + ox * spec.stride + kx] +=
                  share;
        }
  });
}

template <typename S>
Var<S> upsample_nearest(Var<S> x, Index factor) {
  const Nchw in = nchw(x.value());
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  if (factor == 1) return x;
  const Index oh = in.h * factor, ow = in.w * factor;
  std::vector<Index> sources;
  sources.reserve(static_cast<std::size_t>(in.n * in.c * oh * ow));
  for (Index p = 0; p < in.n * in.c; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) sources.push_back((p * in.h + y / factor) * in.w + xx / factor);
  return gather_elements(x, sources, {in.n, in.c, oh, ow});
}

template <typename S>
Var<S> global_avg_pool(Var<S> x) {
  const Nchw in = nchw(x.value());
  const Index plane = in.h * in.w;
  Tensor<S> out({in.n, in.c});
  out.vec() = x.value().matrix(in.n * in.c, plane).rowwise().mean();
  return x.tape().record(std::move(out), {x}, [in, plane](const Tensor<S>&, const Tensor<S>& g, Grads<S> gr) {
    auto gm = gr[0]->matrix(in.n * in.c, plane);
    gm.colwise() += g.vec() / static_cast<S>(plane);
  });
}

// ---------------------------------------------------------------------------
// Attention and loss

template <typename S>
Var<S> attention_weights(Var<S> q, Var<S> k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1) || q.dim(1) < 1) {
    throw ShapeError("attention: query " + shape_string(q.shape()) + " and key " +
                     shape_string(k.shape()) + " disagree");
  }
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(q.dim(1)));
  return softmax(scale(matmul(q, transpose(k)), inv_sqrt_d));
}

template <typename S>
Var<S> scaled_attention(Var<S> q, Var<S> k, Var<S> v) {
  if (v.rank() != 2 || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: key " + shape_string(k.shape()) + " and value " +
                     shape_string(v.shape()) + " disagree");
  }
  return matmul(attention_weights(q, k), v);
}

template <typename S>
Var<S> grouped_attention(Var<S> q, Var<S> k, Var<S> v, Index heads,
                         std::shared_ptr<const std::vector<AttentionGroup>> groups) {
  require_same_shape(q, k, "grouped_attention");
  require_same_shape(q, v, "grouped_attention");
  if (q.rank() != 2 || heads < 1 || q.dim(1) % heads != 0) {
    throw ShapeError("grouped_attention: width " + std::to_string(q.dim(-1)) +
                     " not divisible into " + std::to_string(heads) + " heads");
  }
  const Index rows = q.dim(0), dk = q.dim(1) / heads;
  std::vector<int> covered(static_cast<std::size_t>(rows), 0);
  for (const auto& grp : *groups) {
    if (grp.queries.empty() || grp.keys.empty()) throw ShapeError("grouped_attention: empty group");
    for (Index r : grp.queries) {
      if (r < 0 || r >= rows) throw ShapeError("grouped_attention: query row out of range");
      ++covered[static_cast<std::size_t>(r)];
    }
    for (Index r : grp.keys) {
      if (r < 0 || r >= rows) throw ShapeError("grouped_attention: key row out of range");
    }
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; })) {
    throw ShapeError("grouped_attention: every query row must belong to exactly one group");
  }
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dk));
  auto take = [dk](const Tensor<S>& t, const std::vector<Index>& idx, Index h) {
    Mat m(static_cast<Index>(idx.size()), dk);
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Index>(i)) = t.matrix().row(idx[i]).segment(h * dk, dk);
    return m;
  };
  auto weights = [inv_sqrt](const Mat& qm, const Mat& km) {
    Mat a = qm * km.transpose() * inv_sqrt;
    for (Index r = 0; r < a.rows(); ++r) {
      a.row(r).array() -= a.row(r).maxCoeff();
      a.row(r) = a.row(r).array().exp().matrix();
      a.row(r) /= a.row(r).sum();
    }
    return a;
  };
  Tensor<S> out(q.shape());
  for (const auto& grp : *groups) {
    for (Index h = 0; h < heads; ++h) {
      Mat o = weights(take(q.value(), grp.queries, h), take(k.value(), grp.keys, h)) *
              take(v.value(), grp.keys, h);
      for (std::size_t i = 0; i < grp.queries.size(); ++i) {
        out.matrix().row(grp.queries[i]).segment(h * dk, dk) = o.row(static_cast<Index>(i));
      }
    }
  }
  return q.tape().record(std::move(out), {q, k, v}, [q, k, v, heads, dk, groups, take, weights,
                                                      inv_sqrt](const Tensor<S>&, const Tensor<S>& g,
                                                                Grads<S> gr) {
    for (const auto& grp : *groups) {
      for (Index h = 0; h < heads; ++h) {
        const Mat qm = take(q.value(), grp.queries, h), km = take(k.value(), grp.keys, h);
        const Mat vm = take(v.value(), grp.keys, h);
        const Mat a = weights(qm, km);
        const Mat go = take(g, grp.queries, h);
        const Mat ga = go * vm.transpose();
        Mat gs = a.array() * (ga.colwise() - (ga.array() * a.array()).rowwise().sum().matrix()).array();
        gs *= inv_sqrt;
        auto put = [dk, h](Tensor<S>* dst, const std::vector<Index>& idx, const Mat& m) {
          if (!dst) return;
          for (std::size_t i = 0; i < idx.size(); ++i) {
            dst->matrix().row(idx[i]).segment(h * dk, dk) += m.row(static_cast<Index>(i));
          }
        };
        if (gr[0]) put(gr[0], grp.queries, gs * km);
        if (gr[1]) put(gr[1], grp.keys, gs.transpose() * qm);
        if (gr[2]) put(gr[2], grp.keys, a.transpose() * go);
      }
    }
  });
}

template <typename S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const Index b = logits.dim(0), c = logits.dim(1);
  for (int l : labels) {
    if (l < 0 || l >= c) throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  Tensor<S> probs({b, c});
  S total = 0;
  auto xm = logits.value().matrix();
  for (Index r = 0; r < b; ++r) {
    const S m = xm.row(r).maxCoeff();
    const S lse = m + std::log((xm.row(r).array() - m).exp().sum());
    probs.matrix().row(r) = (xm.row(r).array() - lse).exp().matrix();
    total -= xm(r, labels[static_cast<std::size_t>(r)]) - lse;
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(b));
  return logits.tape().record(std::move(out), {logits}, [probs, labels, b](const Tensor<S>&, const Tensor<S>& g,
                                                                          Grads<S> gr) {
    const S factor = g[0] / static_cast<S>(b);
    auto gm = gr[0]->matrix();
    for (Index r = 0; r < b; ++r) {
      gm.row(r) += probs.matrix().row(r) * factor;
      gm(r, labels[static_cast<std::size_t>(r)]) -= factor;
    }
  });
}

#define RSFME_INSTANTIATE_OPS(S)                                                              \
  template Var<S> add(Var<S>, Var<S>);                                                        \
  template Var<S> sub(Var<S>, Var<S>);                                                        \
  template Var<S> mul(Var<S>, Var<S>);                                                        \
  template Var<S> scale(Var<S>, S);                                                           \
  template Var<S> add_bias(Var<S>, Var<S>);                                                   \
  template Var<S> affine_last_axis(Var<S>, Var<S>, Var<S>);                                   \
  template Var<S> affine_channels(Var<S>, Var<S>, Var<S>);                                    \
  template Var<S> sum(Var<S>);                                                                \
  template Var<S> mean(Var<S>);                                                               \
  template Var<S> weighted_sum(Var<S>, const Tensor<S>&);                                     \
  template Var<S> matmul(Var<S>, Var<S>);                                                     \
  template Var<S> transpose(Var<S>);                                                          \
  template Var<S> reshape(Var<S>, Shape);                                                     \
  template Var<S> permute(Var<S>, std::vector<Index>);                                        \
  template Var<S> concat(const std::vector<Var<S>>&, Index);                                  \
  template Var<S> slice(Var<S>, Index, Index, Index);                                         \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                \
  template Var<S> gather_rows(Var<S>, const std::vector<Index>&);                             \
  template Var<S> scatter_rows(Var<S>, const std::vector<Index>&, Index);                     \
  template Var<S> gather_elements(Var<S>, const std::vector<Index>&, Shape);                  \
  template Var<S> relu(Var<S>);                                                               \
  template Var<S> gelu(Var<S>);                                                               \
  template Var<S> softmax(Var<S>);                                                            \
  template Var<S> log_softmax(Var<S>);                                                        \
  template Var<S> layer_norm(Var<S>, S);                                                      \
  template Var<S> batch_norm(Var<S>, S, NormStats<S>*);                                       \
  template Var<S> batch_norm_fixed(Var<S>, const NormStats<S>&, S);                           \
  template Var<S> dropout(Var<S>, S, std::mt19937_64&);                                       \
  template Var<S> conv2d(Var<S>, Var<S>, Var<S>, const ConvSpec&);                            \
  template Var<S> conv2d(Var<S>, Var<S>, const ConvSpec&);                                    \
  template Var<S> pool2d(Var<S>, const PoolSpec&);                                            \
  template Var<S> upsample_nearest(Var<S>, Index);                                            \
  template Var<S> global_avg_pool(Var<S>);                                                    \
  template Var<S> attention_weights(Var<S>, Var<S>);                                          \
  template Var<S> scaled_attention(Var<S>, Var<S>, Var<S>);                                   \
  template Var<S> grouped_attention(Var<S>, Var<S>, Var<S>, Index,                             \
                                    std::shared_ptr<const std::vector<AttentionGroup>>);       \
  template Var<S> cross_entropy(Var<S>, const std::vector<int>&);

RSFME_INSTANTIATE_OPS(float)
RSFME_INSTANTIATE_OPS(double)

}  // namespace rsfme
