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

#include "rsfme/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rsfme {

namespace {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Indices of the probed scalars out of `total`.
std::vector<Index> choose_probes(Index total, const GradCheckOptions& options) {
  std::vector<Index> all(static_cast<std::size_t>(total));
  std::iota(all.begin(), all.end(), Index{0});
  if (options.sample_fraction >= 1.0) return all;
  const auto wanted = std::max<Index>(
      1, static_cast<Index>(std::ceil(options.sample_fraction * static_cast<double>(total))));
  Rng rng(options.seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(std::min(wanted, total)));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckReport compare_with_finite_differences(std::string name, std::span<double* const> probes,
                                                std::span<const double> analytic,
                                                const std::function<double()>& evaluate,
                                                const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = std::move(name);
  report.tolerance = options.tolerance;
  const double h = options.step;
  const double small = h * 1e-2;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    double& x = *probes[i];
    const double saved = x;
    x = saved + h;
    const double f_plus = evaluate();
    x = saved - h;
    const double f_minus = evaluate();
    double err = relative_error(analytic[i], (f_plus - f_minus) / (2 * h), options.floor);
    if (err >= options.tolerance) {
      // Either a kink sits inside [x - h, x + h] or the gradient is wrong.
      x = saved;
      const double f0 = evaluate();
      x = saved + small;
      const double right = (evaluate() - f0) / small;
      x = saved - small;
      const double left = (f0 - evaluate()) / small;
      if (relative_error(left, right, options.floor) > 10 * options.tolerance) {
        ++report.kinks;
        x = saved;
        continue;
      }
      err = std::min(err, relative_error(analytic[i], 0.5 * (left + right), options.floor));
    }
    x = saved;
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.checked;
  }
  return report;
}

GradCheckReport grad_check(std::string name, const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    tape.backward(fn(tape, vars));
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  std::vector<double*> probes;
  std::vector<double> expected;
  Rng order_rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckOptions sub = options;
    sub.seed = order_rng();
    for (Index i : choose_probes(inputs[k].size(), sub)) {
      probes.push_back(&inputs[k][i]);
      expected.push_back(analytic[k][i]);
    }
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return fn(tape, vars).value()[0];
  };
  return compare_with_finite_differences(std::move(name), probes, expected, evaluate, options);
}

GradCheckReport grad_check_parameters(std::string name, ParameterStore<double>& params,
                                      const LossFn& loss, const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<double*> probes;
  std::vector<double> expected;
  std::vector<Parameter<double>*> trainable = params.trainable();
  Index total = 0;
  for (auto* p : trainable) total += p->value.size();
  for (Index flat : choose_probes(total, options)) {
    Index offset = flat;
    for (auto* p : trainable) {
      if (offset < p->value.size()) {
        probes.push_back(&p->value[offset]);
        expected.push_back(p->grad[offset]);
        break;
      }
      offset -= p->value.size();
    }
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    return loss(tape).value()[0];
  };
  return compare_with_finite_differences(std::move(name), probes, expected, evaluate, options);
}

Tensor<double> jitter(Tensor<double> t, double amount, Rng& rng) {
  std::uniform_real_distribution<double> dist(-amount, amount);
  for (Index i = 0; i < t.size(); ++i) t[i] += dist(rng);
  return t;
}

}  // namespace rsfme
