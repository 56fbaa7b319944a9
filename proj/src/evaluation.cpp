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

#include "rsfme/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace rsfme {

namespace {

Metric ratio(Index num, Index den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

Metric harmonic(const Metric& a, const Metric& b) {
  if (!a || !b) return std::nullopt;
  if (*a + *b == 0.0) return std::nullopt;
  return 2.0 * *a * *b / (*a + *b);
}

Metric macro_mean(const std::vector<ClassMetrics>& rows, Metric ClassMetrics::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.*field) {
      sum += *(r.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

std::string format_metric(const Metric& m, int digits) {
  if (!m) return "undef";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, *m);
  return buf;
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels, Index classes,
                          std::vector<std::string> names) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (classes < 1) throw UsageError("confusion: need at least one class");
  if (names.empty()) {
    for (Index k = 0; k < classes; ++k) names.push_back("class" + std::to_string(k));
  }
  if (static_cast<Index>(names.size()) != classes) throw ShapeError("confusion: class name count mismatch");
  ConfusionMatrix cm{std::move(names), CountMatrix::Zero(classes, classes)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], t = labels[i];
    if (p < 0 || p >= classes || t < 0 || t >= classes) {
      throw DataError("confusion: class index out of range at sample " + std::to_string(i));
    }
    ++cm.counts(p, t);
  }
  return cm;
}

ConfusionMatrix parse_confusion(std::istream& in) {
  std::string header;
  while (header.find_first_not_of(" \t\r") == std::string::npos) {
    if (!std::getline(in, header)) throw DataError("confusion matrix: missing class names");
  }
  ConfusionMatrix cm;
  std::istringstream names(header);
  for (std::string name; names >> name;) cm.classes.push_back(name);
  const Index c = static_cast<Index>(cm.classes.size());
  cm.counts = CountMatrix::Zero(c, c);
  for (Index r = 0; r < c; ++r) {
    for (Index j = 0; j < c; ++j) {
      long long v = 0;
      if (!(in >> v)) {
        throw DataError("confusion matrix: expected " + std::to_string(c * c) + " counts");
      }
      if (v < 0) throw DataError("confusion matrix: negative count");
      cm.counts(r, j) = static_cast<Index>(v);
    }
  }
  std::string rest;
  if (in >> rest) throw DataError("confusion matrix: unexpected trailing token '" + rest + "'");
  return cm;
}

ConfusionMatrix read_confusion(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read confusion matrix " + path.string());
  return parse_confusion(in);
}

void write_confusion(std::ostream& out, const ConfusionMatrix& cm) {
  for (std::size_t k = 0; k < cm.classes.size(); ++k) out << (k ? " " : "") << cm.classes[k];
  out << '\n';
  for (Index r = 0; r < cm.size(); ++r) {
    for (Index j = 0; j < cm.size(); ++j) out << (j ? " " : "") << cm.counts(r, j);
    out << '\n';
  }
}

BinaryTally binary_tally(const ConfusionMatrix& cm, Index k) {
  if (k < 0 || k >= cm.size()) throw UsageError("binary_tally: class index " + std::to_string(k) + " out of range");
  BinaryTally t;
  t.tp = cm.counts(k, k);
  t.fp = cm.counts.row(k).sum() - t.tp;
  t.fn = cm.counts.col(k).sum() - t.tp;
  t.tn = cm.total() - t.tp - t.fp - t.fn;
  return t;
}

double ci_half_width(double error, Index n, double z) {
  if (!(error >= 0.0 && error <= 1.0)) throw UsageError("ci_half_width: error must lie in [0, 1]");
  if (n < 1) throw UsageError("ci_half_width: sample count must be positive");
  return z * std::sqrt(error * (1.0 - error) / static_cast<double>(n));
}

ClassMetrics class_metrics(const BinaryTally& t) {
  ClassMetrics m;
  m.acc = ratio(t.tp + t.tn, t.total());
  m.sen = ratio(t.tp, t.tp + t.fn);
  m.spec = ratio(t.tn, t.tn + t.fp);
  m.pre = ratio(t.tp, t.tp + t.fp);
  m.f = harmonic(m.pre, m.sen);
  if (m.acc) m.ci_half = ci_half_width(std::clamp(1.0 - *m.acc / 100.0, 0.0, 1.0), t.total());
  return m;
}

MetricReport metrics(const ConfusionMatrix& cm, const std::vector<Metric>& auc_pr) {
  if (!auc_pr.empty() && static_cast<Index>(auc_pr.size()) != cm.size()) {
    throw ShapeError("metrics: one AUC-PR value per class expected");
  }
  MetricReport r;
  r.total = cm.total();
  for (Index k = 0; k < cm.size(); ++k) {
    ClassMetrics m = class_metrics(binary_tally(cm, k));
    m.name = k < static_cast<Index>(cm.classes.size()) ? cm.classes[static_cast<std::size_t>(k)] : std::to_string(k);
    if (!auc_pr.empty()) m.auc_pr = auc_pr[static_cast<std::size_t>(k)];
    r.per_class.push_back(std::move(m));
  }
  r.macro.name = "macro";
  r.macro.acc = macro_mean(r.per_class, &ClassMetrics::acc);
  r.macro.sen = macro_mean(r.per_class, &ClassMetrics::sen);
  r.macro.spec = macro_mean(r.per_class, &ClassMetrics::spec);
  r.macro.pre = macro_mean(r.per_class, &ClassMetrics::pre);
  r.macro.f = harmonic(r.macro.pre, r.macro.sen);
  r.macro.ci_half = macro_mean(r.per_class, &ClassMetrics::ci_half);
  r.macro.auc_pr = macro_mean(r.per_class, &ClassMetrics::auc_pr);
  r.accuracy = ratio(cm.correct(), r.total);
  if (r.accuracy) r.accuracy_ci_half = ci_half_width(std::clamp(1.0 - *r.accuracy / 100.0, 0.0, 1.0), r.total);
  return r;
}

void write_metric_csv(std::ostream& out, const MetricReport& report) {
  out << "class,acc,sen,spec,pre,f,ci_half,auc_pr\n";
  auto row = [&](const ClassMetrics& m) {
    out << m.name << ',' << format_metric(m.acc) << ',' << format_metric(m.sen) << ',' << format_metric(m.spec)
        << ',' << format_metric(m.pre) << ',' << format_metric(m.f) << ',' << format_metric(m.ci_half, 6) << ','
        << format_metric(m.auc_pr, 6) << '\n';
  };
  for (const auto& m : report.per_class) row(m);
  row(report.macro);
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("pr_curve: score and label counts differ");
  PrCurve curve;
  const Index n = static_cast<Index>(scores.size());
  const Index total_pos = std::count(positive.begin(), positive.end(), true);
  if (total_pos == 0 || total_pos == n) return curve;

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  Index tp = 0, fp = 0;
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[static_cast<std::size_t>(order[i])];
    // Consume every sample tied at this threshold before emitting a point.
    while (i < order.size() && scores[static_cast<std::size_t>(order[i])] == t) {
      (positive[static_cast<std::size_t>(order[i])] ? tp : fp) += 1;
      ++i;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    curve.points.push_back({t, precision, recall});
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  curve.auc = area;
  return curve;
}

std::vector<PrCurve> pr_curves(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (probs.rows() != static_cast<Index>(labels.size())) throw ShapeError("pr_curves: row count mismatch");
  std::vector<PrCurve> out;
  for (Index k = 0; k < probs.cols(); ++k) {
    std::vector<double> scores(labels.size());
    std::vector<bool> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Index>(i), k);
      pos[i] = labels[i] == k;
    }
    out.push_back(pr_curve(scores, pos));
  }
  return out;
}

void write_pr_csv(std::ostream& out, const std::vector<std::string>& classes, const std::vector<PrCurve>& curves) {
  out << "class,threshold,precision,recall\n";
  char buf[128];
  for (std::size_t k = 0; k < curves.size(); ++k) {
    for (const auto& p : curves[k].points) {
      std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
      out << (k < classes.size() ? classes[k] : std::to_string(k)) << buf;
    }
  }
}

std::optional<Projection> feature_projection(const Eigen::MatrixXd& features) {
  if (features.rows() < 3 || features.cols() < 2) {
    throw ShapeError("feature_projection needs at least 3 vectors of dimension 2 or more");
  }
  const Eigen::MatrixXd centred = features.rowwise() - features.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(features.rows() - 1);
  if (cov.diagonal().maxCoeff() <= 0.0) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("feature_projection: eigendecomposition failed");
  const Index d = cov.rows();
  Projection p;
  p.components.resize(d, 2);
  for (int k = 0; k < 2; ++k) {
    // Eigenvalues come out ascending.
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    for (Index i = 0; i < d; ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0) v = -v;
        break;
      }
    }
    p.components.col(k) = v;
    p.variance(k) = std::max(0.0, eig.eigenvalues()(d - 1 - k));
  }
  p.coords = centred * p.components;
  return p;
}

void write_projection_csv(std::ostream& out, const Projection& p, const std::vector<int>& labels,
                          const std::vector<std::string>& ids) {
  if (static_cast<Index>(labels.size()) != p.coords.rows()) throw ShapeError("projection: label count mismatch");
  out << "sample_id,label,pc1,pc2\n";
  char buf[96];
  for (Index i = 0; i < p.coords.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::snprintf(buf, sizeof(buf), ",%d,%.9g,%.9g\n", labels[k], p.coords(i, 0), p.coords(i, 1));
    out << (k < ids.size() ? ids[k] : std::to_string(i)) << buf;
  }
}

}  // namespace rsfme
