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

// Brute-force reference implementations used only by tests. They take plain
// std::vector data and loop over definitions directly, sharing no code with
// the library paths they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <set>
#include <vector>

namespace oracle {

struct Image4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;
  double at(int in, int ic, int iy, int ix) const { return v[((in * c + ic) * h + iy) * w + ix]; }
  double& at(int in, int ic, int iy, int ix) { return v[((in * c + ic) * h + iy) * w + ix]; }
};

/// Direct nested-loop grouped convolution with zero padding.
inline Image4 conv2d(const Image4& x, const std::vector<double>& weight, const std::vector<double>& bias,
                     int out_channels, int kh, int kw, int stride, int pad, int groups) {
  const int cg = x.c / groups, kg = out_channels / groups;
  Image4 y;
  y.n = x.n;
  y.c = out_channels;
  y.h = (x.h + 2 * pad - kh) / stride + 1;
  y.w = (x.w + 2 * pad - kw) / stride + 1;
  y.v.assign(static_cast<std::size_t>(y.n * y.c * y.h * y.w), 0.0);
  for (int n = 0; n < y.n; ++n)
    for (int k = 0; k < out_channels; ++k) {
      const int g = k / kg;
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) {
          double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(k)];
          for (int c = 0; c < cg; ++c)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int iy = oy * stride - pad + u, ix = ox * stride - pad + v;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                s += x.at(n, g * cg + c, iy, ix) *
                     weight[static_cast<std::size_t>(((k * cg + c) * kh + u) * kw + v)];
              }
          y.at(n, k, oy, ox) = s;
        }
    }
  return y;
}

/// Window scan; max mode or mean mode.
inline Image4 pool2d(const Image4& x, bool max_mode, int size, int stride) {
  Image4 y;
  y.n = x.n;
  y.c = x.c;
  y.h = (x.h - size) / stride + 1;
  y.w = (x.w - size) / stride + 1;
  y.v.assign(static_cast<std::size_t>(y.n * y.c * y.h * y.w), 0.0);
  for (int n = 0; n < y.n; ++n)
    for (int c = 0; c < y.c; ++c)
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) {
          double best = -std::numeric_limits<double>::infinity(), total = 0.0;
          for (int u = 0; u < size; ++u)
            for (int v = 0; v < size; ++v) {
              const double val = x.at(n, c, oy * stride + u, ox * stride + v);
              best = std::max(best, val);
              total += val;
            }
          y.at(n, c, oy, ox) = max_mode ? best : total / (size * size);
        }
  return y;
}

using Matrix = std::vector<std::vector<double>>;

/// SoftMax(Q K^T / sqrt(d)) V written out explicitly.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const std::size_t d = q[0].size();
  Matrix out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> scores(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0;
      for (std::size_t t = 0; t < d; ++t) s += q[i][t] * k[j][t];
      scores[j] = s / std::sqrt(static_cast<double>(d));
    }
    double z = 0;
    for (double s : scores) z += std::exp(s);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t t = 0; t < v[0].size(); ++t) out[i][t] += std::exp(scores[j]) / z * v[j][t];
  }
  return out;
}

struct PrPoint {
  double threshold, precision, recall;
};

/// Enumerates every distinct score as a threshold (predict positive when
/// score >= threshold) and counts TP/FP from scratch for each one.
inline std::vector<PrPoint> pr_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double total_pos = 0;
  for (bool p : positive) total_pos += p ? 1 : 0;
  std::vector<PrPoint> points;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (positive[i] ? tp : fp) += 1;
    }
    points.push_back({t, tp / (tp + fp), tp / total_pos});
  }
  return points;
}

/// Step-interpolated area: sum of precision times recall increment.
inline double auc_pr(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double area = 0, prev_recall = 0;
  for (const auto& p : pr_curve(scores, positive)) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

/// Bilinear sample with half-pixel centers and edge clamping.
inline double bilinear(const std::vector<double>& img, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
         fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]);
}

inline Image4 random_image(int n, int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Image4 x{n, c, h, w, {}};
  x.v.resize(static_cast<std::size_t>(n * c * h * w));
  for (double& e : x.v) e = d(rng);
  return x;
}

}  // namespace oracle
