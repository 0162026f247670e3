#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "manf/tensor.hpp"

namespace manf {

/// Learnable tensor with its gradient and Adam moments.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <std::floating_point T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  // Pushes this node's gradient into its inputs.
  std::function<void(const Tensor<T>&)> backprop;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <std::floating_point T>
class Graph;

/// Handle to a value produced inside (or outside) a graph.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Graph<T>* graph) : node_(std::move(node)), graph_(graph) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n), nullptr);
  }

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Graph<T>* graph() const { return graph_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
  Graph<T>* graph_ = nullptr;
};

/// Append-only tape. Nodes are recorded in creation order, which is a
/// topological order because an op's inputs always exist before it.
template <std::floating_point T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Parameter<T>& p) {
    auto n = std::make_shared<Node<T>>();
    n->value = p.value;
    n->requires_grad = true;
    Parameter<T>* target = &p;
    n->backprop = [target](const Tensor<T>& g) { target->grad += g; };
    nodes_.push_back(n);
    return Var<T>(std::move(n), this);
  }

  /// Differentiable input that is not a parameter (used by gradient checks).
  Var<T> input(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    nodes_.push_back(n);
    return Var<T>(std::move(n), this);
  }

  void record(const std::shared_ptr<Node<T>>& n) { nodes_.push_back(n); }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    if (!loss.requires_grad()) return;
    loss.node()->accumulate(Tensor<T>::scalar(T(1)));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad.empty() || !n.backprop) continue;
      n.backprop(n.grad);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

/// Variable view of a parameter: tracked when a graph is given, constant otherwise.
template <std::floating_point T>
Var<T> param_var(Graph<T>* g, Parameter<T>& p) {
  return g ? g->leaf(p) : Var<T>::constant(p.value);
}

namespace detail {

template <std::floating_point T>
Graph<T>* graph_of(std::initializer_list<const Var<T>*> inputs) {
  for (const Var<T>* v : inputs) {
    if (v->requires_grad()) return v->graph();
  }
  return nullptr;
}

/// Wraps an op result. `backprop` receives the output gradient and is only
/// kept when some input is tracked.
template <std::floating_point T, class F>
Var<T> make_result(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, F&& backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  Graph<T>* g = graph_of<T>(inputs);
  if (g == nullptr) return Var<T>(std::move(n), nullptr);
  n->requires_grad = true;
  n->backprop = std::forward<F>(backprop);
  g->record(n);
  return Var<T>(std::move(n), g);
}

template <std::floating_point T>
void push_grad(const Var<T>& v, const Tensor<T>& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

}  // namespace detail

}  // namespace manf
