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
#include <map>
#include <string>
#include <vector>

#include "rsfme/fme.hpp"
#include "rsfme/training.hpp"

namespace rsfme {

/// Ordered `key = value` settings.
using ConfigMap = std::map<std::string, std::string>;

/// Parses line-based `key = value` text. Blank lines and lines starting with
/// '#' are ignored; anything else without '=' is a UsageError.
ConfigMap parse_config(std::istream& in, const std::string& source = "<config>");
ConfigMap read_config_file(const std::filesystem::path& path);
std::string format_config(const ConfigMap& cfg);

/// Every accepted key: those read by apply_model_config / apply_train_config
/// plus split.test, split.val and model.class_names, which callers read
/// directly.
const std::vector<std::string>& known_config_keys();
/// Throws UsageError naming the first unknown key.
void check_config_keys(const ConfigMap& cfg);

/// `model.profile` (tiny | full) resets the geometry first; other keys:
/// swint.{patch,dim,heads,depth,window,shift}, residual.channels,
/// spatial.channels (comma lists), branches.fusion_grid, model.variant,
/// model.dropout, model.classes.
ModelConfig apply_model_config(const ConfigMap& cfg, ModelConfig base);
ConfigMap model_config_map(const ModelConfig& cfg, bool tiny);

/// `train.profile` resets the hyperparameters first; other keys:
/// train.{epochs,batch,lr,momentum,breakpoints,factor,seed}.
TrainConfig apply_train_config(const ConfigMap& cfg, TrainConfig base);
ConfigMap train_config_map(const TrainConfig& cfg);

}  // namespace rsfme
