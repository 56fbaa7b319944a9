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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "rsfme/data.hpp"
#include "rsfme/fme.hpp"

namespace rsfme {

/// Named hyperparameter set. "table2": lr 1e-3, momentum 0.9, 10 epochs.
/// "sec43": lr 1e-4, momentum 0.95, 50 epochs. Both use batch 16.
struct TrainProfile {
  std::string name;
  double lr;
  double momentum;
  Index epochs;
  Index batch;
};

TrainProfile training_profile(const std::string& name);

struct TrainConfig {
  std::string profile = "table2";
  Index epochs = 10;
  Index batch = 16;
  double lr = 1e-3;
  double momentum = 0.9;
  /// Epochs at which the rate is multiplied by `factor`. Empty selects
  /// round(0.6 E) and round(0.85 E).
  std::vector<Index> breakpoints;
  double factor = 0.1;
  std::uint64_t seed = 0;

  static TrainConfig from_profile(const std::string& name);
  std::vector<Index> resolved_breakpoints() const;
  void validate() const;
};

/// Piecewise-constant rate for a zero-based epoch.
double learning_rate(Index epoch, const TrainConfig& cfg);

/// Classical momentum: v <- mu v + g, p <- p - lr v. One velocity per
/// trainable parameter, created as zeros on first use.
template <typename Scalar>
struct OptimizerState {
  double lr = 1e-3;
  double momentum = 0.9;
  std::vector<Tensor<Scalar>> velocity;
};

template <typename Scalar>
void sgd_step(const std::vector<Parameter<Scalar>*>& params, OptimizerState<Scalar>& state);

/// Serialized training state. Tensors are stored as 32-bit floats.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  double lr = 0.0;
  double momentum = 0.0;
  /// Keyed by trainable parameter name.
  std::vector<std::pair<std::string, Tensor<float>>> velocity;
  /// Completed epochs.
  Index epoch = 0;
  double best_accuracy = -1.0;
  Index best_epoch = -1;
  std::string config;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError on a foreign magic, version mismatch, truncation or
/// trailing bytes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterStore<Scalar>& params, const OptimizerState<Scalar>* state);

/// Copies checkpoint tensors into `params`. Every parameter must be present
/// with its exact shape, otherwise CheckpointError.
template <typename Scalar>
void restore_parameters(const Checkpoint& ckpt, ParameterStore<Scalar>& params);

template <typename Scalar>
OptimizerState<Scalar> restore_optimizer(const Checkpoint& ckpt, ParameterStore<Scalar>& params);

/// Inference-mode outputs for a list of samples.
template <typename Scalar>
struct Inference {
  Tensor<Scalar> logits;    // [n, c]
  Tensor<Scalar> probs;     // [n, c]
  Tensor<Scalar> features;  // [n, C_total], pooled fused features
};

template <typename Scalar>
Inference<Scalar> infer(RsFmeModel<Scalar>& model, const std::vector<const Image*>& images, Index batch = 16);

struct EpochRecord {
  Index epoch = 0;
  std::string split;  // "train" or "validation"
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

/// Writes the CSV header `epoch,split,loss,accuracy,lr`.
void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpochRecord& r);

struct TrainOptions {
  /// Receives last.ckpt after every epoch and best.ckpt on validation
  /// improvement. Empty disables checkpointing.
  std::filesystem::path out_dir;
  /// Training log; the header is written only when starting from epoch 0.
  std::ostream* log = nullptr;
  /// Continue from this checkpoint (typically out_dir/last.ckpt).
  std::filesystem::path resume;
  /// Stored verbatim in every checkpoint.
  std::string config_snapshot;
  /// Called after each optimizer step with the running step count and the
  /// batch loss.
  std::function<void(Index step, double loss)> on_step;
  /// Called after each epoch; returning false stops training.
  std::function<bool(Index epoch, Index steps)> on_epoch;
  /// Stops after this many epochs of this call even if cfg.epochs is larger.
  /// Negative means no limit.
  Index stop_after = -1;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  Index steps = 0;
  Index epochs_completed = 0;
  double best_accuracy = -1.0;
  Index best_epoch = -1;
};

/// Minibatch SGD over split.train with a seeded shuffle per epoch. Validation
/// (or, when empty, training) accuracy selects the best checkpoint. Throws
/// NumericalError as soon as the loss is non-finite.
template <typename Scalar>
TrainResult train(RsFmeModel<Scalar>& model, const Dataset& data, const DatasetSplit& split, const TrainConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace rsfme
