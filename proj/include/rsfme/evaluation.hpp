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

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rsfme/tensor.hpp"

namespace rsfme {

/// Metric value; empty when the defining ratio is 0/0.
using Metric = std::optional<double>;

/// Renders a metric with `digits` decimals, or "undef".
std::string format_metric(const Metric& m, int digits = 4);

using CountMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;

/// counts(predicted, target): rows are output classes, columns true classes.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  CountMatrix counts;

  Index size() const { return counts.rows(); }
  Index total() const { return counts.sum(); }
  Index correct() const { return counts.trace(); }
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels, Index classes,
                          std::vector<std::string> names = {});

/// Text format: c class names on the first line, then c rows of c counts.
/// Rows are predicted classes.
ConfusionMatrix parse_confusion(std::istream& in);
ConfusionMatrix read_confusion(const std::filesystem::path& path);
void write_confusion(std::ostream& out, const ConfusionMatrix& cm);

struct BinaryTally {
  Index tp = 0, tn = 0, fp = 0, fn = 0;
  Index total() const { return tp + tn + fp + fn; }
};

/// One-vs-rest counts for `positive`.
BinaryTally binary_tally(const ConfusionMatrix& cm, Index positive);

/// Percentages. Sen = TP/(TP+FN) (per true class), Pre = TP/(TP+FP) (per
/// predicted class), F = harmonic mean of Pre and Sen.
struct ClassMetrics {
  std::string name;
  Metric acc, sen, spec, pre, f;
  /// z sqrt(e (1 - e) / n) with e = 1 - acc / 100, as a fraction.
  Metric ci_half;
  Metric auc_pr;
};

ClassMetrics class_metrics(const BinaryTally& t);

struct MetricReport {
  std::vector<ClassMetrics> per_class;
  /// Unweighted means of the per-class values, except f, which is the
  /// harmonic mean of the macro Pre and Sen.
  ClassMetrics macro;
  /// Overall accuracy (trace / total) in percent and its CI half-width.
  Metric accuracy;
  Metric accuracy_ci_half;
  Index total = 0;
};

/// Full metric suite for a confusion matrix. `auc_pr` (one per class) is
/// copied into the report when given.
MetricReport metrics(const ConfusionMatrix& cm, const std::vector<Metric>& auc_pr = {});

/// z sqrt(error (1 - error) / n). UsageError for error outside [0, 1] or n < 1.
double ci_half_width(double error, Index n, double z = 1.96);

/// CSV with header `class,acc,sen,spec,pre,f,ci_half,auc_pr` and a macro row.
void write_metric_csv(std::ostream& out, const MetricReport& report);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // thresholds descending
  /// Step-interpolated area: sum of precision times recall increment.
  Metric auc;
};

/// Sweeps every distinct score (descending), predicting positive when
/// score >= threshold. Labels that are all positive or all negative give an
/// empty curve and an undefined area.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& positive);

/// One-vs-rest curves from a [n, c] probability matrix.
std::vector<PrCurve> pr_curves(const Eigen::MatrixXd& probs, const std::vector<int>& labels);

/// CSV `class,threshold,precision,recall`.
void write_pr_csv(std::ostream& out, const std::vector<std::string>& classes, const std::vector<PrCurve>& curves);

struct Projection {
  Eigen::MatrixXd coords;        // [n, 2]
  Eigen::Vector2d variance;      // explained variance of PC1, PC2
  Eigen::MatrixXd components;    // [d, 2]
};

/// Projects mean-centred rows of `features` onto the top two principal
/// components. Each component's first loading with |v| > 1e-12 is made
/// positive. Returns nullopt for zero-variance input; ShapeError for fewer
/// than three rows or two columns.
std::optional<Projection> feature_projection(const Eigen::MatrixXd& features);

/// CSV `sample_id,label,pc1,pc2`.
void write_projection_csv(std::ostream& out, const Projection& p, const std::vector<int>& labels,
                          const std::vector<std::string>& ids = {});

}  // namespace rsfme
