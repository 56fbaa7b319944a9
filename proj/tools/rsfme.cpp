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

// rsfme: augment, split, train, eval, predict, gradcheck, features.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rsfme/config.hpp"
#include "rsfme/data.hpp"
#include "rsfme/evaluation.hpp"
#include "rsfme/fme.hpp"
#include "rsfme/gradient_suite.hpp"
#include "rsfme/training.hpp"

namespace {

using namespace rsfme;

/// Command-line values that override config keys; only flags actually given
/// are applied.
struct Overrides {
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::Option*, std::string>> options;
  bool tiny = false;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values[key];
    options.emplace_back(app->add_option(flag, slot, help + " [" + key + "]"), key);
  }
  void apply(ConfigMap& cfg) const {
    for (const auto& [opt, key] : options) {
      if (opt->count() > 0) cfg[key] = values.at(key);
    }
    if (tiny) cfg["model.profile"] = "tiny";
  }
};

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

struct Resolved {
  ConfigMap cfg;
  ModelConfig model;
  TrainConfig train;
  double test_fraction = 0.2;
  double val_fraction = 0.2;
};

std::uint64_t resolve_seed(const Globals& g) {
  if (g.seed) return *g.seed;
  const char* env = std::getenv("RSFME_SEED");
  if (!env) return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used == std::string(env).size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(std::string("RSFME_SEED must be a non-negative integer, got '") + env + "'");
}

double fraction(const ConfigMap& cfg, const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected a number, got '" + it->second + "'");
}

/// defaults < `base` (checkpoint snapshot) < config file < flags; the seed
/// falls back to RSFME_SEED when neither file nor flag sets it.
Resolved resolve(const Globals& g, const Overrides& o, ConfigMap base = {}) {
  Resolved r;
  r.cfg = std::move(base);
  if (!g.config_file.empty()) {
    for (auto& [k, v] : read_config_file(g.config_file)) r.cfg[k] = v;
  }
  o.apply(r.cfg);
  if (g.seed) r.cfg["train.seed"] = std::to_string(*g.seed);
  if (!r.cfg.count("train.seed") && std::getenv("RSFME_SEED")) r.cfg["train.seed"] = std::to_string(resolve_seed(g));
  check_config_keys(r.cfg);
  r.model = apply_model_config(r.cfg, ModelConfig::full());
  r.train = apply_train_config(r.cfg, TrainConfig{});
  r.test_fraction = fraction(r.cfg, "split.test", 0.2);
  r.val_fraction = fraction(r.cfg, "split.val", 0.2);

  ConfigMap shown = model_config_map(r.model, r.cfg.count("model.profile") && r.cfg.at("model.profile") == "tiny");
  for (auto& [k, v] : train_config_map(r.train)) shown[k] = v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", r.test_fraction);
  shown["split.test"] = buf;
  std::snprintf(buf, sizeof(buf), "%g", r.val_fraction);
  shown["split.val"] = buf;
  if (auto it = r.cfg.find("model.class_names"); it != r.cfg.end()) shown["model.class_names"] = it->second;
  r.cfg = shown;
  std::cerr << "# resolved config\n" << format_config(r.cfg) << std::flush;
  return r;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct DataArgs {
  std::string root;
  Index synthetic = 8;

  void add(CLI::App* app) {
    app->add_option("--data", root, "Dataset root with one folder per class");
    app->add_option("--synthetic", synthetic,
                    "Images per class of a generated dataset, used when --data is absent")
        ->check(CLI::PositiveNumber);
  }
  Dataset load(const Resolved& r) const {
    if (!root.empty()) {
      Dataset d = load_dataset(root, r.model.image(), &std::cerr);
      if (d.skipped) std::cerr << "skipped " << d.skipped << " unreadable files\n";
      if (static_cast<Index>(d.classes.size()) != r.model.classes) {
        throw DataError(root + " has " + std::to_string(d.classes.size()) + " classes, model expects " +
                        std::to_string(r.model.classes));
      }
      return d;
    }
    return synthetic_dataset(r.model.classes, synthetic, r.model.image(), r.train.seed);
  }
};

std::vector<Index> partition(const DatasetSplit& s, const std::string& name, Index total) {
  if (name == "train") return s.train;
  if (name == "val" || name == "validation") return s.validation;
  if (name == "test") return s.test;
  if (name == "all") {
    std::vector<Index> all(static_cast<std::size_t>(total));
    for (Index i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  throw UsageError("unknown partition '" + name + "' (train, val, test or all)");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

/// Model and resolved settings restored from a checkpoint's snapshot.
struct Loaded {
  Resolved resolved;
  RsFmeModel<float> model;
  std::vector<std::string> class_names;
};

Loaded load_model(const std::string& path, const Globals& g, const Overrides& o) {
  const Checkpoint ckpt = load_checkpoint(path);
  std::istringstream snapshot(ckpt.config);
  Resolved r = resolve(g, o, parse_config(snapshot, path));
  RsFmeModel<float> model(r.model, 0);
  restore_parameters(ckpt, model.parameters());
  std::vector<std::string> names;
  if (auto it = r.cfg.find("model.class_names"); it != r.cfg.end()) names = split_list(it->second);
  if (static_cast<Index>(names.size()) != r.model.classes) {
    names.clear();
    for (Index k = 0; k < r.model.classes; ++k) names.push_back("class" + std::to_string(k));
  }
  return {std::move(r), std::move(model), std::move(names)};
}

int run(int argc, char** argv) {
  CLI::App app{"Hybrid transformer/CNN skin-lesion classifier toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed (falls back to RSFME_SEED) [train.seed]");
  app.add_option("--threads", g.threads, "Worker thread cap")->check(CLI::PositiveNumber);

  // Flags shared by model-building commands.
  auto model_flags = [](CLI::App* sub, Overrides& o) {
    sub->add_flag("--tiny", o.tiny, "Use the 32-pixel tiny geometry [model.profile]");
    o.add(sub, "--variant", "model.variant", "swint, swint+s, swint+r or rs-fme-swint");
  };
  auto split_flags = [](CLI::App* sub, Overrides& o) {
    o.add(sub, "--test", "split.test", "Test fraction");
    o.add(sub, "--val", "split.val", "Validation fraction of the remainder");
  };

  // augment
  auto* augment = app.add_subcommand("augment", "Write augmented copies of a dataset");
  std::string aug_in, aug_out, aug_format = "jpg";
  Index aug_rounds = 20, aug_batch = 16;
  std::optional<Index> aug_size;
  augment->add_option("--data", aug_in, "Dataset root")->required();
  augment->add_option("--out", aug_out, "Output root")->required();
  augment->add_option("--rounds", aug_rounds, "Augmentation rounds (1-20)");
  augment->add_option("--batch", aug_batch, "Images per augmentation batch");
  augment->add_option("--format", aug_format, "jpg, png or raw");
  augment->add_option("--size", aug_size, "Resize images to size x size on load");

  // split
  auto* split = app.add_subcommand("split", "Stratified holdout split of a dataset");
  Overrides split_o;
  DataArgs split_data;
  std::string split_out;
  split_data.add(split);
  split_flags(split, split_o);
  model_flags(split, split_o);
  split->add_option("--out", split_out, "CSV path (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  Overrides train_o;
  DataArgs train_data;
  std::string train_out = "run", train_resume;
  train_data.add(train_cmd);
  model_flags(train_cmd, train_o);
  split_flags(train_cmd, train_o);
  train_o.add(train_cmd, "--profile", "train.profile", "Hyperparameter profile: table2 or sec43");
  train_o.add(train_cmd, "--epochs", "train.epochs", "Epochs");
  train_o.add(train_cmd, "--batch", "train.batch", "Minibatch size");
  train_o.add(train_cmd, "--lr", "train.lr", "Base learning rate");
  train_o.add(train_cmd, "--momentum", "train.momentum", "SGD momentum");
  train_o.add(train_cmd, "--breakpoints", "train.breakpoints", "Comma-separated schedule epochs");
  train_cmd->add_option("--out", train_out, "Run folder for checkpoints and train_log.csv");
  train_cmd->add_option("--resume", train_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  // eval
  auto* eval = app.add_subcommand("eval", "Metrics from a confusion matrix file or a checkpoint");
  Overrides eval_o;
  DataArgs eval_data;
  std::string eval_matrix, eval_ckpt, eval_out, eval_part = "test";
  eval->add_option("--matrix", eval_matrix, "Confusion matrix text file")->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->check(CLI::ExistingFile);
  eval->add_option("--partition", eval_part, "train, val, test or all");
  eval->add_option("--out", eval_out, "Output folder (default: metric CSV to stdout)");
  eval_data.add(eval);
  split_flags(eval, eval_o);

  // predict
  auto* predict = app.add_subcommand("predict", "Class probabilities for image files");
  Overrides predict_o;
  std::string predict_ckpt;
  std::vector<std::string> predict_images;
  predict->add_option("--checkpoint", predict_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("images", predict_images, "Image files")->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  bool grad_tiny = false;
  gradcheck->add_flag("--tiny", grad_tiny, "Accepted for symmetry; the suite always runs at small shapes");

  // features
  auto* features = app.add_subcommand("features", "Two-component projection of pooled features");
  Overrides feat_o;
  DataArgs feat_data;
  std::string feat_ckpt, feat_out, feat_part = "test";
  features->add_option("--checkpoint", feat_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  features->add_option("--partition", feat_part, "train, val, test or all");
  features->add_option("--out", feat_out, "CSV path (default stdout)");
  feat_data.add(features);
  split_flags(features, feat_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    // Always the full listing, so every flag of every subcommand is visible.
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  Eigen::setNbThreads(g.threads);

  if (*augment) {
    Dataset d = load_dataset(aug_in, aug_size, &std::cerr);
    AugmentOptions opt;
    opt.rounds = aug_rounds;
    opt.batch = aug_batch;
    opt.seed = resolve_seed(g);
    opt.out = aug_out;
    opt.format = parse_image_format(aug_format);
    std::cerr << "# resolved config\naugment.rounds = " << opt.rounds << "\naugment.batch = " << opt.batch
              << "\naugment.seed = " << opt.seed << "\naugment.format = " << aug_format << "\n";
    const auto out = augment_dataset(d, opt);
    std::cout << "read " << d.samples.size() << " images, wrote " << out.size() << " to " << aug_out << "\n";
    return 0;
  }

  if (*split) {
    Resolved r = resolve(g, split_o);
    Dataset d = split_data.load(r);
    const DatasetSplit s = holdout_split(d, r.test_fraction, r.val_fraction, r.train.seed);
    std::ofstream file;
    std::ostream& out = split_out.empty() ? std::cout : (file = open_out(split_out), file);
    out << "index,partition,label,class,path\n";
    for (const auto& [name, part] : {std::pair{"train", &s.train}, {"val", &s.validation}, {"test", &s.test}}) {
      for (Index i : *part) {
        const auto& smp = d.samples[static_cast<std::size_t>(i)];
        out << i << ',' << name << ',' << smp.label << ',' << d.classes[static_cast<std::size_t>(smp.label)] << ','
            << smp.source.string() << '\n';
      }
    }
    for (std::size_t k = 0; k < d.classes.size(); ++k) {
      std::cerr << d.classes[k] << ": train " << s.per_class[k][0] << ", val " << s.per_class[k][1] << ", test "
                << s.per_class[k][2] << "\n";
    }
    std::cerr << "total: train " << s.train.size() << ", val " << s.validation.size() << ", test " << s.test.size()
              << "\n";
    return 0;
  }

  if (*train_cmd) {
    Resolved r = resolve(g, train_o);
    Dataset d = train_data.load(r);
    std::string names;
    for (const auto& c : d.classes) names += (names.empty() ? "" : ",") + c;
    r.cfg["model.class_names"] = names;
    const DatasetSplit s = holdout_split(d, r.test_fraction, r.val_fraction, r.train.seed);
    RsFmeModel<float> model(r.model, r.train.seed);
    std::filesystem::create_directories(train_out);
    const auto log_path = std::filesystem::path(train_out) / "train_log.csv";
    std::ofstream log(log_path, train_resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write " + log_path.string());
    TrainOptions opt;
    opt.out_dir = train_out;
    opt.log = &log;
    opt.resume = train_resume;
    opt.config_snapshot = format_config(r.cfg);
    const TrainResult res = train(model, d, s, r.train, opt);
    std::cout << "trained " << res.epochs_completed << " epochs (" << res.steps << " steps); best "
              << (s.validation.empty() ? "train" : "validation") << " accuracy " << res.best_accuracy
              << " at epoch " << res.best_epoch << "; log " << log_path.string() << "\n";
    return 0;
  }

  if (*eval) {
    if (eval_matrix.empty() == eval_ckpt.empty()) throw UsageError("eval needs exactly one of --matrix or --checkpoint");
    ConfusionMatrix cm;
    std::vector<Metric> aucs;
    std::vector<PrCurve> curves;
    if (!eval_matrix.empty()) {
      cm = read_confusion(eval_matrix);
    } else {
      Loaded l = load_model(eval_ckpt, g, eval_o);
      Dataset d = eval_data.load(l.resolved);
      const DatasetSplit s = holdout_split(d, l.resolved.test_fraction, l.resolved.val_fraction, l.resolved.train.seed);
      const auto idx = partition(s, eval_part, static_cast<Index>(d.samples.size()));
      if (idx.empty()) throw DataError("partition '" + eval_part + "' is empty");
      std::vector<const Image*> imgs;
      std::vector<int> labels, preds;
      for (Index i : idx) {
        imgs.push_back(&d.samples[static_cast<std::size_t>(i)].image);
        labels.push_back(d.samples[static_cast<std::size_t>(i)].label);
      }
      const Inference<float> inf = infer(l.model, imgs, l.resolved.train.batch);
      const Eigen::MatrixXd probs = inf.probs.matrix().cast<double>();
      for (Index r = 0; r < probs.rows(); ++r) {
        Index best = 0;
        probs.row(r).maxCoeff(&best);
        preds.push_back(static_cast<int>(best));
      }
      cm = confusion(preds, labels, l.resolved.model.classes, l.class_names);
      curves = pr_curves(probs, labels);
      for (const auto& c : curves) aucs.push_back(c.auc);
    }
    const MetricReport report = metrics(cm, aucs);
    if (eval_out.empty()) {
      write_metric_csv(std::cout, report);
    } else {
      std::filesystem::create_directories(eval_out);
      auto m = open_out(eval_out + "/metrics.csv");
      write_metric_csv(m, report);
      auto c = open_out(eval_out + "/confusion.txt");
      write_confusion(c, cm);
      if (!curves.empty()) {
        auto p = open_out(eval_out + "/pr_curve.csv");
        write_pr_csv(p, cm.classes, curves);
      }
    }
    std::cerr << "samples " << report.total << "\naccuracy " << format_metric(report.accuracy) << " % (95% CI +/- "
              << format_metric(report.accuracy_ci_half ? std::optional(*report.accuracy_ci_half * 100.0)
                                                       : std::nullopt)
              << " pp)\nmacro rate over predicted classes (row-wise) " << format_metric(report.macro.pre)
              << "\nmacro rate over true classes (column-wise) " << format_metric(report.macro.sen)
              << "\nharmonic mean " << format_metric(report.macro.f) << "\n";
    return 0;
  }

  if (*predict) {
    Loaded l = load_model(predict_ckpt, g, predict_o);
    std::vector<Image> images;
    for (const auto& path : predict_images) images.push_back(resize(read_image(path), l.resolved.model.image(),
                                                                    l.resolved.model.image()));
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const Inference<float> inf = infer(l.model, ptrs, l.resolved.train.batch);
    std::cout << "path,predicted";
    for (const auto& c : l.class_names) std::cout << ',' << c;
    std::cout << '\n';
    for (std::size_t i = 0; i < predict_images.size(); ++i) {
      const auto row = static_cast<Index>(i);
      Index best = 0;
      inf.probs.matrix().row(row).maxCoeff(&best);
      std::cout << predict_images[i] << ',' << l.class_names[static_cast<std::size_t>(best)];
      char buf[32];
      for (Index k = 0; k < inf.probs.dim(1); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.6f", static_cast<double>(inf.probs(row, k)));
        std::cout << buf;
      }
      std::cout << '\n';
    }
    return 0;
  }

  if (*gradcheck) {
    GradientSuiteOptions opt;
    opt.seed = resolve_seed(g);
    std::cerr << "# resolved config\ngradcheck.seed = " << opt.seed << "\ngradcheck.op_tolerance = "
              << opt.op_tolerance << "\ngradcheck.block_tolerance = " << opt.block_tolerance << "\n";
    bool ok = true;
    run_gradient_suite(opt, [&](const GradCheckReport& r) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-22s max_rel_err %.3e  tol %.0e  checked %5lld  kinks %3lld  %s\n",
                    r.name.c_str(), r.max_relative_error, r.tolerance, static_cast<long long>(r.checked),
                    static_cast<long long>(r.kinks), r.passed() ? "PASS" : "FAIL");
      std::cout << line << std::flush;
      ok = ok && r.passed();
    });
    return ok ? 0 : 3;
  }

  if (*features) {
    Loaded l = load_model(feat_ckpt, g, feat_o);
    Dataset d = feat_data.load(l.resolved);
    const DatasetSplit s = holdout_split(d, l.resolved.test_fraction, l.resolved.val_fraction, l.resolved.train.seed);
    const auto idx = partition(s, feat_part, static_cast<Index>(d.samples.size()));
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (Index i : idx) {
      const auto& smp = d.samples[static_cast<std::size_t>(i)];
      imgs.push_back(&smp.image);
      labels.push_back(smp.label);
      ids.push_back(smp.source.empty() ? std::to_string(i) : smp.source.string());
    }
    if (imgs.empty()) throw DataError("partition '" + feat_part + "' is empty");
    const Inference<float> inf = infer(l.model, imgs, l.resolved.train.batch);
    const auto proj = feature_projection(inf.features.matrix().cast<double>());
    if (!proj) throw NumericalError("features have zero variance; projection undefined");
    std::ofstream file;
    std::ostream& out = feat_out.empty() ? std::cout : (file = open_out(feat_out), file);
    write_projection_csv(out, *proj, labels, ids);
    std::cerr << "explained variance pc1 " << proj->variance(0) << ", pc2 " << proj->variance(1) << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rsfme::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const rsfme::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const rsfme::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const rsfme::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
