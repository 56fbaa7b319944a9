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

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rsfme/tensor.hpp"

namespace rsfme {

/// Named tensor owned by a model. Buffers (running statistics) are stored
/// alongside trainable weights but are never touched by the optimizer.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;
};

/// Insertion-ordered parameter collection with stable addresses.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value, bool trainable = true) {
    if (index_.count(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = name;
    p->grad = Tensor<Scalar>::zeros_like(value);
    p->value = std::move(value);
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Scalar>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<Scalar>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw ShapeError("unknown parameter '" + name + "'");
    return *p;
  }

  std::vector<Parameter<Scalar>*> all() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<Scalar>*> all() const {
    std::vector<const Parameter<Scalar>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter<Scalar>*> trainable() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  /// Number of trainable scalars.
  Index trainable_count() const {
    Index n = 0;
    for (auto& p : params_)
      if (p->trainable) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.vec().setZero();
  }

  std::size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index rank() const { return value().rank(); }
  Tape<Scalar>& tape() const { return *tape_; }
  Index id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename Scalar>
class Tape {
 public:
  /// Accumulates d(loss)/d(input_k) into grads[k] given the node's output and
  /// its gradient; a null entry marks an input that does not need a gradient.
  using BackwardFn = std::function<void(const Tensor<Scalar>& output, const Tensor<Scalar>& grad_out,
                                        std::span<Tensor<Scalar>* const> grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), {}, nullptr, false); }

  /// Leaf whose gradient is readable through grad() after backward().
  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), {}, nullptr, true); }

  Var<Scalar> parameter(Parameter<Scalar>& p) {
    Var<Scalar> v = push(p.value, {}, nullptr, true);
    nodes_[v.id()].param = &p;
    return v;
  }

  Var<Scalar> record(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NumericalError("non-finite value produced by forward op");
    bool needs = false;
    std::vector<Index> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ShapeError("op inputs recorded on different tapes");
      ids.push_back(in.id());
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), std::move(ids), needs ? std::move(backward) : nullptr, needs);
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient of the last backward() loss w.r.t. v (zeros when unreachable).
  Tensor<Scalar> grad(Var<Scalar> v) const {
    const Node& n = nodes_.at(v.id());
    return n.has_grad ? n.grad : Tensor<Scalar>::zeros_like(n.value);
  }

  /// Propagates d(loss)/d(node) to every reachable node and adds the result
  /// into each reachable Parameter::grad.
  void backward(Var<Scalar> loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
    }
    Node& root = nodes_[loss.id()];
    root.grad = Tensor<Scalar>(root.value.shape(), Scalar(1));
    root.has_grad = true;
    std::vector<Tensor<Scalar>*> grads;
    for (Index i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) {
        grads.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          Node& in = nodes_[n.inputs[k]];
          if (!in.requires_grad) continue;
          if (!in.has_grad) {
            in.grad = Tensor<Scalar>::zeros_like(in.value);
            in.has_grad = true;
          }
          grads[k] = &in.grad;
        }
        n.backward(n.value, n.grad, grads);
      }
      if (n.param) n.param->grad.vec() += n.grad.vec();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    std::vector<Index> inputs;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var<Scalar> push(Tensor<Scalar> value, std::vector<Index> inputs, BackwardFn backward,
                   bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  std::deque<Node> nodes_;
};

}  // namespace rsfme
