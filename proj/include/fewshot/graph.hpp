/*
 * Copyright 2026 The fewshot Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fewshot/parameter.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

template <typename Scalar>
class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; valid while the
/// graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim() const { return value().dim(); }
  Index size(Index axis) const { return value().size(axis); }
  bool requires_grad() const;

  Graph<Scalar>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph<Scalar>;
  Var(Graph<Scalar>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of primitive operations in execution order.
///
/// Every primitive supplies a forward rule (used once when recorded and again
/// by replay()) and a backward rule that accumulates into the gradient
/// buffers of the inputs that need one. A graph may be backpropagated once.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;
  using Inputs = std::vector<const TensorT*>;
  using Grads = std::vector<TensorT*>;  // nullptr where no gradient is needed
  using ForwardFn = std::function<TensorT(const Inputs&)>;
  using BackwardFn =
      std::function<void(const TensorT& upstream, const Inputs& in, const TensorT& out, Grads& g)>;

  Graph() : owner_(std::this_thread::get_id()) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false, nullptr, "constant"); }

  Var<Scalar> variable(TensorT value, bool requires_grad = true) {
    return leaf(std::move(value), requires_grad, nullptr, "variable");
  }

  // One leaf per parameter per graph; repeated calls return the same node.
  // Frozen parameters enter as constants and never receive gradients.
  Var<Scalar> parameter(const ParamPtr<Scalar>& p) {
    auto it = param_nodes_.find(p.get());
    if (it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    Var<Scalar> v = leaf(p->value, p->trainable(), p.get(), p->name);
    param_nodes_.emplace(p.get(), v.id());
    return v;
  }

  // Records a primitive. A null backward rule marks the output as
  // non-differentiable (detach).
  Var<Scalar> record(std::string op, const std::vector<Var<Scalar>>& inputs, ForwardFn forward,
                     BackwardFn backward) {
    check_thread();
    Node node;
    node.op = std::move(op);
    Inputs in;
    in.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.graph_ != this) throw std::logic_error("Var from another graph passed to " + node.op);
      node.inputs.push_back(v.id());
      in.push_back(&nodes_[v.id()].value);
      node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    }
    node.value = forward(in);
    if (!node.value.all_finite()) throw NonFinite("forward of " + node.op);
    if (!backward) node.requires_grad = false;
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // Reverse sweep from a scalar loss. Parameter leaves accumulate (sum) into
  // Parameter::grad; intermediate gradients stay readable through grad().
  void backward(const Var<Scalar>& loss) {
    check_thread();
    if (consumed_) throw GraphConsumed("backward already ran on this graph");
    if (loss.graph_ != this) throw std::logic_error("loss from another graph");
    if (loss.value().numel() != 1) throw NotScalar("loss shape " + shape_str(loss.shape()));
    consumed_ = true;
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = TensorT(root.value.shape(), Scalar(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.requires_grad || !node.grad.defined() || !node.backward) continue;
      if (!node.grad.all_finite()) throw NonFinite("gradient at " + node.op);
      Inputs in;
      Grads grads;
      in.reserve(node.inputs.size());
      grads.reserve(node.inputs.size());
      for (std::size_t input : node.inputs) {
        Node& src = nodes_[input];
        in.push_back(&src.value);
        if (src.requires_grad) {
          if (!src.grad.defined()) src.grad = TensorT::zeros_like(src.value);
          grads.push_back(&src.grad);
        } else {
          grads.push_back(nullptr);
        }
      }
      node.backward(node.grad, in, node.value, grads);
    }
    for (Node& node : nodes_) {
      if (!node.param || !node.grad.defined()) continue;
      if (!node.grad.all_finite()) throw NonFinite("gradient of " + node.param->name);
      if (node.param->grad.defined())
        node.param->grad.flat() += node.grad.flat();
      else
        node.param->grad = node.grad;
    }
  }

  // Gradient accumulated at a node by backward(), or nullptr.
  const TensorT* grad(const Var<Scalar>& v) const {
    const Node& node = nodes_[v.id()];
    return node.grad.defined() ? &node.grad : nullptr;
  }

  // Recomputes every recorded value from the leaves in topological order.
  std::vector<TensorT> replay() const {
    std::vector<TensorT> values(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& node = nodes_[id];
      if (!node.forward) {
        values[id] = node.value;
        continue;
      }
      Inputs in;
      for (std::size_t input : node.inputs) in.push_back(&values[input]);
      values[id] = node.forward(in);
    }
    return values;
  }

  const TensorT& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> leaf(TensorT value, bool requires_grad, Parameter<Scalar>* param, std::string op) {
    check_thread();
    if (!value.defined()) throw ShapeMismatch("undefined tensor entered graph as " + op);
    if (!value.all_finite()) throw NonFinite("leaf " + op);
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.param = param;
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  void check_thread() const {
    if (std::this_thread::get_id() != owner_)
      throw std::logic_error("Graph used from a thread other than the one recording it");
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> param_nodes_;
  std::thread::id owner_;
  bool consumed_ = false;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return graph_->value(id_);
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return graph_->requires_grad(id_);
}

}  // namespace fewshot
