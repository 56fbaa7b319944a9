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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rsfme/config.hpp"
#include "rsfme/grad_check.hpp"
#include "rsfme/training.hpp"
#include "temp_dir.hpp"

using namespace rsfme;

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

DatasetSplit all_train(Index n) {
  DatasetSplit s;
  s.train.resize(static_cast<std::size_t>(n));
  std::iota(s.train.begin(), s.train.end(), Index{0});
  return s;
}

bool same_parameters(const ParameterStore<float>& a, const ParameterStore<float>& b) {
  const auto pa = a.all(), pb = b.all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || !(pa[i]->value == pb[i]->value)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cross entropy") {
  Tape<double> tape;
  SUBCASE("uniform prediction over five classes is ln 5") {
    Var<double> logits = tape.constant(Tensor<double>({3, 5}, 0.25));
    CHECK(cross_entropy(logits, {0, 2, 4}).value()[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("perfect prediction is zero") {
    Tensor<double> t({1, 3}, {200.0, 0.0, 0.0});
    CHECK(cross_entropy(tape.constant(t), {0}).value()[0] == doctest::Approx(0.0));
  }
  SUBCASE("gradient is (softmax - onehot) / B") {
    Tensor<double> t({2, 3}, {0.3, -1.2, 2.0, 0.5, 0.1, -0.4});
    Var<double> x = tape.variable(t);
    tape.backward(cross_entropy(x, {2, 0}));
    const Tensor<double> g = tape.grad(x);
    const int labels[] = {2, 0};
    for (Index r = 0; r < 2; ++r) {
      double z = 0;
      for (Index j = 0; j < 3; ++j) z += std::exp(t(r, j));
      for (Index j = 0; j < 3; ++j) {
        const double expect = (std::exp(t(r, j)) / z - (j == labels[r] ? 1.0 : 0.0)) / 2.0;
        CHECK(g(r, j) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& in) { return cross_entropy(in[0], {2, 0}); };
    GradCheckOptions opt;
    opt.tolerance = 1e-6;
    CHECK(grad_check("cross_entropy", fn, {t}, opt).passed());
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(cross_entropy(tape.constant(Tensor<double>({1, 3})), {3}), ShapeError);
  }
}

TEST_CASE("sgd_step") {
  ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>({1}, 1.0));
  OptimizerState<double> state{0.1, 0.9, {}};
  SUBCASE("hand-evaluated momentum updates") {
    p.grad[0] = 0.5;
    sgd_step({&p}, state);
    CHECK(state.velocity[0][0] == doctest::Approx(0.5));
    CHECK(p.value[0] == doctest::Approx(0.95));
    sgd_step({&p}, state);
    CHECK(state.velocity[0][0] == doctest::Approx(0.95));
    CHECK(p.value[0] == doctest::Approx(0.855));
  }
  SUBCASE("zero gradient and velocity leave parameters unchanged") {
    sgd_step({&p}, state);
    CHECK(p.value[0] == 1.0);
  }
  SUBCASE("zero rate changes nothing, zero momentum is plain descent") {
    p.grad[0] = 0.7;
    state.lr = 0.0;
    sgd_step({&p}, state);
    CHECK(p.value[0] == 1.0);
    OptimizerState<double> plain{0.2, 0.0, {}};
    for (int k = 0; k < 3; ++k) {
      const double before = p.value[0];
      sgd_step({&p}, plain);
      CHECK(p.value[0] == before - 0.2 * 0.7);
    }
  }
  SUBCASE("shape mismatch") {
    state.velocity.push_back(Tensor<double>({2}));
    CHECK_THROWS_AS(sgd_step({&p}, state), ShapeError);
    state.velocity.clear();
    auto& q = store.add("q", Tensor<double>({2}));
    sgd_step({&p, &q}, state);
    CHECK_THROWS_AS(sgd_step({&p}, state), ShapeError);
  }
}

TEST_CASE("learning-rate schedule and profiles") {
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.epochs = 50;
  CHECK(cfg.resolved_breakpoints() == std::vector<Index>{30, 43});
  CHECK(learning_rate(0, cfg) == 0.5);
  CHECK(learning_rate(29, cfg) == 0.5);
  CHECK(learning_rate(30, cfg) == doctest::Approx(0.05));
  CHECK(learning_rate(42, cfg) == doctest::Approx(0.05));
  CHECK(learning_rate(43, cfg) == doctest::Approx(0.005));
  double prev = learning_rate(0, cfg);
  for (Index e = 1; e < 60; ++e) {
    CHECK(learning_rate(e, cfg) <= prev);
    prev = learning_rate(e, cfg);
  }
  CHECK_THROWS_AS(learning_rate(-1, cfg), UsageError);

  const TrainConfig t2 = TrainConfig::from_profile("table2");
  CHECK(t2.lr == 1e-3);
  CHECK(t2.momentum == 0.9);
  CHECK(t2.batch == 16);
  CHECK(t2.epochs == 10);
  const TrainConfig s43 = TrainConfig::from_profile("sec43");
  CHECK(s43.lr == 1e-4);
  CHECK(s43.momentum == 0.95);
  CHECK(s43.epochs == 50);
  CHECK(TrainConfig{}.lr == t2.lr);
  CHECK_THROWS_AS(TrainConfig::from_profile("adam"), UsageError);
  TrainConfig bad;
  bad.batch = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = {};
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("config files") {
  std::istringstream text("# comment\n\nmodel.profile = tiny\nmodel.variant=swint+r\n train.epochs = 3 \n");
  ConfigMap cfg = parse_config(text);
  CHECK(cfg.size() == 3);
  check_config_keys(cfg);
  ModelConfig m = apply_model_config(cfg, ModelConfig::full());
  CHECK(m.image() == 32);
  CHECK(m.variant == Variant::kSwinTResidual);
  CHECK(apply_train_config(cfg, TrainConfig{}).epochs == 3);

  ConfigMap round = model_config_map(ModelConfig::tiny(), true);
  for (auto& [k, v] : train_config_map(TrainConfig::from_profile("sec43"))) round[k] = v;
  std::istringstream again(format_config(round));
  ConfigMap parsed = parse_config(again);
  CHECK(parsed == round);
  const TrainConfig t = apply_train_config(parsed, TrainConfig{});
  CHECK(t.momentum == 0.95);
  CHECK(t.resolved_breakpoints() == std::vector<Index>{30, 43});
  const ModelConfig mt = apply_model_config(parsed, ModelConfig::full());
  CHECK(mt.fused_channels() == ModelConfig::tiny().fused_channels());

  std::istringstream broken("model.variant swint\n");
  CHECK_THROWS_AS(parse_config(broken), UsageError);
  CHECK_THROWS_AS(check_config_keys({{"model.colour", "red"}}), UsageError);
  CHECK_THROWS_AS(apply_train_config({{"train.epochs", "ten"}}, TrainConfig{}), UsageError);
  CHECK_THROWS_AS(apply_model_config({{"residual.channels", "1,2"}}, ModelConfig::tiny()), UsageError);
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir tmp;
  RsFmeModel<float> model(ModelConfig::tiny(), 3);
  ParameterStore<float>& store = model.parameters();
  OptimizerState<float> state{0.01, 0.9, {}};
  for (auto* p : store.trainable()) p->grad.vec().setConstant(0.25f);
  sgd_step(store.trainable(), state);

  Checkpoint ckpt = make_checkpoint(store, &state);
  ckpt.epoch = 4;
  ckpt.best_accuracy = 0.75;
  ckpt.best_epoch = 2;
  ckpt.config = "model.profile = tiny\n";
  const fs::path path = tmp.path() / "a.ckpt";
  save_checkpoint(path, ckpt);
  const std::string bytes = file_bytes(path);
  CHECK(bytes.substr(0, 4) == "RSFM");

  SUBCASE("save then load is bitwise exact") {
    Checkpoint back = load_checkpoint(path);
    CHECK(back.epoch == 4);
    CHECK(back.best_accuracy == 0.75);
    CHECK(back.best_epoch == 2);
    CHECK(back.config == ckpt.config);
    CHECK(back.lr == 0.01);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < back.tensors.size(); ++i) {
      CHECK(back.tensors[i].first == ckpt.tensors[i].first);
      CHECK(back.tensors[i].second == ckpt.tensors[i].second);
    }
    RsFmeModel<float> other(ModelConfig::tiny(), 99);
    CHECK(!same_parameters(other.parameters(), store));
    restore_parameters(back, other.parameters());
    CHECK(same_parameters(other.parameters(), store));
    OptimizerState<float> st = restore_optimizer(back, other.parameters());
    REQUIRE(st.velocity.size() == state.velocity.size());
    for (std::size_t i = 0; i < st.velocity.size(); ++i) CHECK(st.velocity[i] == state.velocity[i]);
    save_checkpoint(tmp.path() / "b.ckpt", back);
    CHECK(file_bytes(tmp.path() / "b.ckpt") == bytes);
  }
  SUBCASE("reloaded tiny model gives identical logits") {
    Rng rng(1);
    Dataset d = synthetic_dataset(2, 2, 32, 5);
    std::vector<const Image*> imgs{&d.samples[0].image, &d.samples[3].image};
    RsFmeModel<float> other(ModelConfig::tiny(), 42);
    restore_parameters(load_checkpoint(path), other.parameters());
    CHECK(infer(other, imgs).logits == infer(model, imgs).logits);
  }
  SUBCASE("truncated file") {
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      write_bytes(tmp.path() / "t.ckpt", bytes.substr(0, cut));
      CHECK_THROWS_AS(load_checkpoint(tmp.path() / "t.ckpt"), CheckpointError);
    }
    write_bytes(tmp.path() / "t.ckpt", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "t.ckpt"), CheckpointError);
  }
  SUBCASE("foreign magic and version mismatch") {
    std::string foreign = bytes;
    foreign[0] = 'P';
    write_bytes(tmp.path() / "f.ckpt", foreign);
    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "f.ckpt"), CheckpointError);
    std::string future = bytes;
    future[4] = 2;
    write_bytes(tmp.path() / "v.ckpt", future);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path() / "v.ckpt"), doctest::Contains("version"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "missing.ckpt"), CheckpointError);
  }
  SUBCASE("architecture mismatch") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.variant = Variant::kSwinT;
    RsFmeModel<float> other(cfg, 1);
    CHECK_THROWS_AS(restore_parameters(load_checkpoint(path), other.parameters()), CheckpointError);
  }
}

TEST_CASE("training loop") {
  Dataset data = synthetic_dataset(2, 4, 32, 8);
  TrainConfig cfg = TrainConfig::from_profile("table2");
  cfg.seed = 7;

  SUBCASE("overfits 8 synthetic images within 200 steps") {
    RsFmeModel<float> model(ModelConfig::tiny(), 7);
    cfg.epochs = 200;
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    for (const auto& s : data.samples) {
      imgs.push_back(&s.image);
      labels.push_back(s.label);
    }
    std::vector<double> losses;
    TrainOptions opt;
    opt.on_step = [&](Index, double loss) { losses.push_back(loss); };
    double accuracy = 0.0;
    opt.on_epoch = [&](Index, Index) {
      const Inference<float> inf = infer(model, imgs);
      Index correct = 0;
      for (Index r = 0; r < 8; ++r) {
        Index best = inf.probs(r, 0) >= inf.probs(r, 1) ? 0 : 1;
        correct += best == labels[static_cast<std::size_t>(r)];
      }
      accuracy = static_cast<double>(correct) / 8.0;
      return accuracy < 1.0;
    };
    TrainResult res = train(model, data, all_train(8), cfg, opt);
    INFO("steps " << res.steps << " first loss " << losses.front() << " last loss " << losses.back());
    CHECK(accuracy == 1.0);
    CHECK(res.steps <= 200);
    CHECK(losses.back() < losses.front());
  }
  SUBCASE("same seed, same log; resume reproduces the uninterrupted run") {
    TempDir tmp;
    cfg.epochs = 4;
    cfg.batch = 3;
    DatasetSplit split = holdout_split(data, 0.0, 0.25, 1);
    REQUIRE(!split.validation.empty());

    std::ostringstream full_log, again_log;
    RsFmeModel<float> a(ModelConfig::tiny(), 1), b(ModelConfig::tiny(), 1);
    TrainOptions oa;
    oa.log = &full_log;
    train(a, data, split, cfg, oa);
    TrainOptions ob;
    ob.log = &again_log;
    train(b, data, split, cfg, ob);
    CHECK(full_log.str() == again_log.str());
    CHECK(same_parameters(a.parameters(), b.parameters()));
    CHECK(full_log.str().rfind("epoch,split,loss,accuracy,lr\n", 0) == 0);

    std::ostringstream part_log;
    RsFmeModel<float> c(ModelConfig::tiny(), 1);
    TrainOptions oc;
    oc.log = &part_log;
    oc.out_dir = tmp.path() / "run";
    oc.stop_after = 2;
    oc.config_snapshot = "train.seed = 7\n";
    TrainResult first = train(c, data, split, cfg, oc);
    CHECK(first.epochs_completed == 2);
    CHECK(fs::exists(tmp.path() / "run" / "best.ckpt"));
    CHECK(load_checkpoint(tmp.path() / "run" / "last.ckpt").config == oc.config_snapshot);

    RsFmeModel<float> d(ModelConfig::tiny(), 555);
    TrainOptions od;
    od.log = &part_log;
    od.out_dir = tmp.path() / "run";
    od.resume = tmp.path() / "run" / "last.ckpt";
    TrainResult second = train(d, data, split, cfg, od);
    CHECK(second.epochs_completed == 2);
    CHECK(part_log.str() == full_log.str());
    CHECK(same_parameters(a.parameters(), d.parameters()));
  }
  SUBCASE("different seeds differ") {
    cfg.epochs = 1;
    cfg.batch = 2;
    std::ostringstream l1, l2;
    RsFmeModel<float> a(ModelConfig::tiny(), 1), b(ModelConfig::tiny(), 1);
    TrainOptions o1, o2;
    o1.log = &l1;
    o2.log = &l2;
    train(a, data, all_train(8), cfg, o1);
    cfg.seed = 8;
    train(b, data, all_train(8), cfg, o2);
    CHECK(l1.str() != l2.str());
  }
  SUBCASE("divergence aborts") {
    cfg.epochs = 20;
    cfg.lr = 1e12;
    RsFmeModel<float> model(ModelConfig::tiny(), 1);
    CHECK_THROWS_AS(train(model, data, all_train(8), cfg), NumericalError);
  }
  SUBCASE("input validation") {
    RsFmeModel<float> model(ModelConfig::tiny(), 1);
    CHECK_THROWS_AS(train(model, data, DatasetSplit{}, cfg), DataError);
    Dataset wrong = synthetic_dataset(2, 2, 16, 1);
    CHECK_THROWS_AS(train(model, wrong, all_train(4), cfg), ShapeError);
  }
}

TEST_CASE("inference outputs") {
  Dataset data = synthetic_dataset(3, 2, 32, 2);
  RsFmeModel<double> model(ModelConfig::tiny(), 4);
  std::vector<const Image*> imgs;
  for (const auto& s : data.samples) imgs.push_back(&s.image);
  const Inference<double> all = infer(model, imgs, 4);
  CHECK(all.probs.shape() == Shape{6, 5});
  CHECK(all.features.shape() == Shape{6, ModelConfig::tiny().fused_channels()});
  for (Index r = 0; r < 6; ++r) CHECK(all.probs.matrix().row(r).sum() == doctest::Approx(1.0));
  const Inference<double> single = infer(model, {imgs[5]}, 1);
  for (Index j = 0; j < 5; ++j) CHECK(single.probs(0, j) == doctest::Approx(all.probs(5, j)).epsilon(1e-12));
  CHECK_THROWS_AS(infer(model, {}, 1), ShapeError);
}
