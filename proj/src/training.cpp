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

#include "rsfme/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

namespace rsfme {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

TrainProfile training_profile(const std::string& name) {
  if (name == "table2") return {"table2", 1e-3, 0.9, 10, 16};
  if (name == "sec43") return {"sec43", 1e-4, 0.95, 50, 16};
  throw UsageError("unknown training profile '" + name + "' (expected table2 or sec43)");
}

TrainConfig TrainConfig::from_profile(const std::string& name) {
  const TrainProfile p = training_profile(name);
  TrainConfig cfg;
  cfg.profile = p.name;
  cfg.lr = p.lr;
  cfg.momentum = p.momentum;
  cfg.epochs = p.epochs;
  cfg.batch = p.batch;
  return cfg;
}

std::vector<Index> TrainConfig::resolved_breakpoints() const {
  if (!breakpoints.empty()) return breakpoints;
  const double e = static_cast<double>(epochs);
  return {static_cast<Index>(std::lround(0.6 * e)), static_cast<Index>(std::lround(0.85 * e))};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch < 1) throw UsageError("batch size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("learning rate must be finite and non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (!(factor > 0.0 && factor <= 1.0)) throw UsageError("schedule factor must lie in (0, 1]");
  for (Index b : breakpoints) {
    if (b < 0) throw UsageError("schedule breakpoints must be non-negative");
  }
}

double learning_rate(Index epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw UsageError("epoch must be non-negative");
  double lr = cfg.lr;
  for (Index b : cfg.resolved_breakpoints()) {
    if (epoch >= b) lr *= cfg.factor;
  }
  return lr;
}

template <typename Scalar>
void sgd_step(const std::vector<Parameter<Scalar>*>& params, OptimizerState<Scalar>& state) {
  if (state.velocity.empty()) {
    for (const auto* p : params) state.velocity.push_back(Tensor<Scalar>::zeros_like(p->value));
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("optimizer holds " + std::to_string(state.velocity.size()) + " velocities for " +
                     std::to_string(params.size()) + " parameters");
  }
  const auto lr = static_cast<Scalar>(state.lr);
  const auto mu = static_cast<Scalar>(state.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Scalar>& p = *params[i];
    Tensor<Scalar>& v = state.velocity[i];
    if (v.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError("optimizer shape mismatch for '" + p.name + "'");
    }
    v.vec() = mu * v.vec() + p.grad.vec();
    p.value.vec() -= lr * v.vec();
  }
}

// --- checkpoint I/O -------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'S', 'F', 'M'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  void bytes(const std::string& s) { buf_ += s; }
  void text(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    text(name);
    put(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put(static_cast<std::uint64_t>(d));
    buf_.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string text() { return raw(get<std::uint32_t>()); }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = text();
    const auto rank = get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("corrupt checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::uint64_t>();
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw CheckpointError("corrupt checkpoint: bad extent in '" + name + "'");
      count *= d;
      if (count > remaining()) throw CheckpointError("corrupt checkpoint: truncated tensor '" + name + "'");
      shape.push_back(static_cast<Index>(d));
    }
    need(count * sizeof(float));
    Tensor<float> t(shape);
    std::memcpy(t.data(), data_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return {std::move(name), std::move(t)};
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw CheckpointError("corrupt checkpoint: truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.put(Checkpoint::kVersion);
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) w.tensor(name, t);

  Writer opt;
  opt.put(ckpt.lr);
  opt.put(ckpt.momentum);
  opt.put(static_cast<std::uint64_t>(ckpt.epoch));
  opt.put(ckpt.best_accuracy);
  opt.put(static_cast<std::int64_t>(ckpt.best_epoch));
  opt.put(static_cast<std::uint32_t>(ckpt.velocity.size()));
  for (const auto& [name, t] : ckpt.velocity) opt.tensor(name, t);
  w.put(static_cast<std::uint64_t>(opt.str().size()));
  w.bytes(opt.str());

  w.text(ckpt.config);

  // Write then rename so an interrupted save never leaves a partial file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw DataError("cannot write checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data));
  if (r.remaining() < 4 || r.raw(4) != std::string(kMagic, 4)) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint ckpt;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) ckpt.tensors.push_back(r.tensor());

  const auto blob_size = r.get<std::uint64_t>();
  if (blob_size > r.remaining()) throw CheckpointError("corrupt checkpoint: truncated file");
  Reader opt(r.raw(static_cast<std::size_t>(blob_size)));
  ckpt.lr = opt.get<double>();
  ckpt.momentum = opt.get<double>();
  ckpt.epoch = static_cast<Index>(opt.get<std::uint64_t>());
  ckpt.best_accuracy = opt.get<double>();
  ckpt.best_epoch = static_cast<Index>(opt.get<std::int64_t>());
  const auto velocities = opt.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < velocities; ++i) ckpt.velocity.push_back(opt.tensor());
  if (opt.remaining() != 0) throw CheckpointError("corrupt checkpoint: optimizer block size mismatch");

  ckpt.config = r.text();
  if (r.remaining() != 0) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return ckpt;
}

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterStore<Scalar>& params, const OptimizerState<Scalar>* state) {
  Checkpoint ckpt;
  for (const auto* p : params.all()) ckpt.tensors.emplace_back(p->name, p->value.template cast<float>());
  if (state) {
    ckpt.lr = state->lr;
    ckpt.momentum = state->momentum;
    std::size_t k = 0;
    for (const auto* p : params.all()) {
      if (!p->trainable) continue;
      if (k >= state->velocity.size()) break;
      ckpt.velocity.emplace_back(p->name, state->velocity[k++].template cast<float>());
    }
  }
  return ckpt;
}

template <typename Scalar>
void restore_parameters(const Checkpoint& ckpt, ParameterStore<Scalar>& params) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  if (by_name.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (auto* p : params.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw CheckpointError("checkpoint shape " + shape_string(it->second->shape()) + " for '" + p->name +
                            "' does not match model shape " + shape_string(p->value.shape()));
    }
    p->value = it->second->template cast<Scalar>();
  }
}

template <typename Scalar>
OptimizerState<Scalar> restore_optimizer(const Checkpoint& ckpt, ParameterStore<Scalar>& params) {
  OptimizerState<Scalar> state;
  state.lr = ckpt.lr;
  state.momentum = ckpt.momentum;
  if (ckpt.velocity.empty()) return state;
  const auto trainable = params.trainable();
  if (ckpt.velocity.size() != trainable.size()) {
    throw CheckpointError("checkpoint optimizer state does not match the model's trainable parameters");
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto& [name, v] = ckpt.velocity[i];
    if (name != trainable[i]->name || v.shape() != trainable[i]->value.shape()) {
      throw CheckpointError("checkpoint velocity '" + name + "' does not match '" + trainable[i]->name + "'");
    }
    state.velocity.push_back(v.template cast<Scalar>());
  }
  return state;
}

// --- training loop --------------------------------------------------------

namespace {

template <typename Scalar>
Index argmax_row(const Tensor<Scalar>& logits, Index row) {
  const Index c = logits.dim(1);
  Index best = 0;
  for (Index j = 1; j < c; ++j) {
    if (logits(row, j) > logits(row, best)) best = j;
  }
  return best;
}

std::vector<const Image*> gather_images(const Dataset& data, std::span<const Index> indices) {
  std::vector<const Image*> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(&data.samples.at(static_cast<std::size_t>(i)).image);
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const Index> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(data.samples.at(static_cast<std::size_t>(i)).label);
  return out;
}

}  // namespace

template <typename Scalar>
Inference<Scalar> infer(RsFmeModel<Scalar>& model, const std::vector<const Image*>& images, Index batch) {
  if (images.empty()) throw ShapeError("inference needs at least one image");
  if (batch < 1) throw UsageError("batch size must be at least 1");
  const Index n = static_cast<Index>(images.size());
  const Index c = model.config().classes;
  const Index f = model.config().fused_channels();
  Inference<Scalar> out{Tensor<Scalar>({n, c}), Tensor<Scalar>({n, c}), Tensor<Scalar>({n, f})};
  for (Index begin = 0; begin < n; begin += batch) {
    const Index count = std::min(batch, n - begin);
    std::vector<const Image*> chunk(images.begin() + begin, images.begin() + begin + count);
    Tape<Scalar> tape;
    Context<Scalar> ctx{tape, Mode::kInfer};
    auto res = model.forward(ctx, tape.constant(images_to_tensor<Scalar>(chunk)));
    const Tensor<Scalar> probs = softmax(res.logits).value();
    out.logits.matrix(n, c).middleRows(begin, count) = res.logits.value().matrix(count, c);
    out.probs.matrix(n, c).middleRows(begin, count) = probs.matrix(count, c);
    out.features.matrix(n, f).middleRows(begin, count) = res.pooled.value().matrix(count, f);
  }
  return out;
}

void write_log_header(std::ostream& out) { out << "epoch,split,loss,accuracy,lr\n"; }

void write_log_row(std::ostream& out, const EpochRecord& r) {
  char line[160];
  std::snprintf(line, sizeof(line), "%lld,%s,%.9g,%.9g,%.9g\n", static_cast<long long>(r.epoch), r.split.c_str(),
                r.loss, r.accuracy, r.lr);
  out << line;
}

template <typename Scalar>
TrainResult train(RsFmeModel<Scalar>& model, const Dataset& data, const DatasetSplit& split, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (split.train.empty()) throw DataError("training partition is empty");
  const Index image = model.config().image();
  for (const auto* part : {&split.train, &split.validation}) {
    for (Index i : *part) {
      const Image& im = data.samples.at(static_cast<std::size_t>(i)).image;
      if (im.height != image || im.width != image) {
        throw ShapeError("sample " + std::to_string(i) + " is " + std::to_string(im.height) + "x" +
                         std::to_string(im.width) + ", model expects " + std::to_string(image));
      }
    }
  }

  auto& store = model.parameters();
  const auto trainable = store.trainable();
  OptimizerState<Scalar> state{cfg.lr, cfg.momentum, {}};
  TrainResult result;
  Index start = 0;
  if (!options.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume);
    restore_parameters(ckpt, store);
    state = restore_optimizer(ckpt, store);
    start = ckpt.epoch;
    result.best_accuracy = ckpt.best_accuracy;
    result.best_epoch = ckpt.best_epoch;
  }
  if (options.log && start == 0) write_log_header(*options.log);
  if (!options.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw DataError("cannot create " + options.out_dir.string() + ": " + ec.message());
  }

  const Index classes = model.config().classes;
  std::vector<Index> order = split.train;
  const Index end = options.stop_after < 0 ? cfg.epochs : std::min(cfg.epochs, start + options.stop_after);
  for (Index epoch = start; epoch < end; ++epoch) {
    state.lr = learning_rate(epoch, cfg);
    // Every epoch draws from its own streams so a resumed run sees the
    // same shuffles and dropout masks as an uninterrupted one.
    order = split.train;
    Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 1));
    Rng dropout_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 2));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    Index correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch), order.size() - begin);
      std::span<const Index> idx(order.data() + begin, count);
      const std::vector<int> labels = gather_labels(data, idx);
      for (int l : labels) {
        if (l < 0 || l >= classes) throw DataError("label " + std::to_string(l) + " outside model classes");
      }
      Tape<Scalar> tape;
      Context<Scalar> ctx{tape, Mode::kTrain, &dropout_rng};
      auto out = model.forward(ctx, tape.constant(images_to_tensor<Scalar>(gather_images(data, idx))));
      Var<Scalar> loss = cross_entropy(out.logits, labels);
      const double loss_value = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      store.zero_grad();
      tape.backward(loss);
      sgd_step(trainable, state);
      ++result.steps;
      loss_sum += loss_value * static_cast<double>(count);
      for (std::size_t k = 0; k < count; ++k) {
        if (argmax_row(out.logits.value(), static_cast<Index>(k)) == labels[k]) ++correct;
      }
      if (options.on_step) options.on_step(result.steps, loss_value);
    }
    const double n_train = static_cast<double>(order.size());
    EpochRecord tr{epoch, "train", loss_sum / n_train, static_cast<double>(correct) / n_train, state.lr};
    result.log.push_back(tr);
    if (options.log) write_log_row(*options.log, tr);

    double selection = tr.accuracy;
    if (!split.validation.empty()) {
      const auto imgs = gather_images(data, split.validation);
      const auto labels = gather_labels(data, split.validation);
      Inference<Scalar> inf = infer(model, imgs, cfg.batch);
      double vloss = 0.0;
      Index vcorrect = 0;
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const Index row = static_cast<Index>(k);
        // log-sum-exp for the per-sample loss
        const Scalar m = inf.logits.matrix(inf.logits.dim(0), classes).row(row).maxCoeff();
        double lse = 0.0;
        for (Index j = 0; j < classes; ++j) lse += std::exp(static_cast<double>(inf.logits(row, j) - m));
        vloss += std::log(lse) + static_cast<double>(m) - static_cast<double>(inf.logits(row, labels[k]));
        if (argmax_row(inf.logits, row) == labels[k]) ++vcorrect;
      }
      const double nv = static_cast<double>(labels.size());
      EpochRecord va{epoch, "validation", vloss / nv, static_cast<double>(vcorrect) / nv, state.lr};
      result.log.push_back(va);
      if (options.log) write_log_row(*options.log, va);
      selection = va.accuracy;
    }
    if (options.log) options.log->flush();

    const bool improved = selection > result.best_accuracy;
    if (improved) {
      result.best_accuracy = selection;
      result.best_epoch = epoch;
    }
    if (!options.out_dir.empty()) {
      Checkpoint ckpt = make_checkpoint(store, &state);
      ckpt.epoch = epoch + 1;
      ckpt.best_accuracy = result.best_accuracy;
      ckpt.best_epoch = result.best_epoch;
      ckpt.config = options.config_snapshot;
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", ckpt);
      save_checkpoint(options.out_dir / "last.ckpt", ckpt);
    }
    ++result.epochs_completed;
    if (options.on_epoch && !options.on_epoch(epoch, result.steps)) break;
  }
  return result;
}

#define RSFME_INSTANTIATE_TRAINING(S)                                                                          \
  template void sgd_step<S>(const std::vector<Parameter<S>*>&, OptimizerState<S>&);                            \
  template Checkpoint make_checkpoint<S>(const ParameterStore<S>&, const OptimizerState<S>*);                  \
  template void restore_parameters<S>(const Checkpoint&, ParameterStore<S>&);                                  \
  template OptimizerState<S> restore_optimizer<S>(const Checkpoint&, ParameterStore<S>&);                      \
  template Inference<S> infer<S>(RsFmeModel<S>&, const std::vector<const Image*>&, Index);                     \
  template TrainResult train<S>(RsFmeModel<S>&, const Dataset&, const DatasetSplit&, const TrainConfig&,       \
                                const TrainOptions&);

RSFME_INSTANTIATE_TRAINING(float)
RSFME_INSTANTIATE_TRAINING(double)

}  // namespace rsfme
