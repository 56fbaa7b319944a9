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

#include "rsfme/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rsfme {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Index to_index(const std::string& key, const std::string& v) {
  Index out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw UsageError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected a number, got '" + v + "'");
}

std::vector<Index> to_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_index(key, item));
  }
  return out;
}

template <typename Range>
std::string join(const Range& r) {
  std::string out;
  for (auto v : r) {
    if (!out.empty()) out += ",";
    out += std::to_string(v);
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ConfigMap parse_config(std::istream& in, const std::string& source) {
  ConfigMap cfg;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw UsageError(source + ":" + std::to_string(number) + ": empty key");
    cfg[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  return parse_config(in, path.string());
}

std::string format_config(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) out += k + " = " + v + "\n";
  return out;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "model.profile",    "model.variant",    "model.dropout",        "model.classes",  "swint.patch",
      "swint.dim",        "swint.heads",      "swint.depth",          "swint.window",   "swint.shift",
      "residual.channels", "spatial.channels", "branches.fusion_grid", "train.profile",  "train.epochs",
      "train.batch",      "train.lr",         "train.momentum",       "train.breakpoints", "train.factor",
      "train.seed",       "split.test",       "split.val",            "model.class_names"};
  return keys;
}

void check_config_keys(const ConfigMap& cfg) {
  const auto& known = known_config_keys();
  for (const auto& [k, v] : cfg) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError("unknown config key '" + k + "'");
  }
}

ModelConfig apply_model_config(const ConfigMap& cfg, ModelConfig m) {
  if (auto it = cfg.find("model.profile"); it != cfg.end()) {
    const Variant v = m.variant;
    if (it->second == "tiny") {
      m = ModelConfig::tiny();
    } else if (it->second == "full") {
      m = ModelConfig::full();
    } else {
      throw UsageError("model.profile must be tiny or full, got '" + it->second + "'");
    }
    m.variant = v;
  }
  for (const auto& [k, v] : cfg) {
    if (k == "model.variant") m.variant = parse_variant(v);
    else if (k == "model.dropout") m.dropout = to_double(k, v);
    else if (k == "model.classes") m.classes = to_index(k, v);
    else if (k == "swint.patch") m.swin.patch = to_index(k, v);
    else if (k == "swint.dim") m.swin.dim = to_index(k, v);
    else if (k == "swint.heads") m.swin.heads = to_index(k, v);
    else if (k == "swint.depth") m.swin.depth = to_index(k, v);
    else if (k == "swint.window") m.swin.window = to_index(k, v);
    else if (k == "swint.shift") m.swin.shift = to_index(k, v);
    else if (k == "residual.channels") m.branches.residual = to_list(k, v);
    else if (k == "spatial.channels") m.branches.spatial = to_list(k, v);
    else if (k == "branches.fusion_grid") m.branches.fusion_grid = to_index(k, v);
  }
  m.validate();
  return m;
}

ConfigMap model_config_map(const ModelConfig& m, bool tiny) {
  return {{"model.profile", tiny ? "tiny" : "full"},
          {"model.variant", variant_name(m.variant)},
          {"model.dropout", num(m.dropout)},
          {"model.classes", std::to_string(m.classes)},
          {"swint.patch", std::to_string(m.swin.patch)},
          {"swint.dim", std::to_string(m.swin.dim)},
          {"swint.heads", std::to_string(m.swin.heads)},
          {"swint.depth", std::to_string(m.swin.depth)},
          {"swint.window", std::to_string(m.swin.window)},
          {"swint.shift", std::to_string(m.swin.shift)},
          {"residual.channels", join(m.branches.residual)},
          {"spatial.channels", join(m.branches.spatial)},
          {"branches.fusion_grid", std::to_string(m.branches.fusion_grid)}};
}

TrainConfig apply_train_config(const ConfigMap& cfg, TrainConfig t) {
  if (auto it = cfg.find("train.profile"); it != cfg.end()) {
    const std::uint64_t seed = t.seed;
    t = TrainConfig::from_profile(it->second);
    t.seed = seed;
  }
  for (const auto& [k, v] : cfg) {
    if (k == "train.epochs") t.epochs = to_index(k, v);
    else if (k == "train.batch") t.batch = to_index(k, v);
    else if (k == "train.lr") t.lr = to_double(k, v);
    else if (k == "train.momentum") t.momentum = to_double(k, v);
    else if (k == "train.breakpoints") t.breakpoints = to_list(k, v);
    else if (k == "train.factor") t.factor = to_double(k, v);
    else if (k == "train.seed") t.seed = to_u64(k, v);
  }
  t.validate();
  return t;
}

ConfigMap train_config_map(const TrainConfig& t) {
  return {{"train.profile", t.profile},
          {"train.epochs", std::to_string(t.epochs)},
          {"train.batch", std::to_string(t.batch)},
          {"train.lr", num(t.lr)},
          {"train.momentum", num(t.momentum)},
          {"train.breakpoints", join(t.resolved_breakpoints())},
          {"train.factor", num(t.factor)},
          {"train.seed", std::to_string(t.seed)}};
}

}  // namespace rsfme
