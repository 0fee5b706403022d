#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedefm/nn/tensor.hpp"

namespace fedefm::nn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient flowing into a node and accumulates into the
/// gradients of its parents (one slot per parent, null when the parent does
/// not require a gradient).
using BackwardFn =
    std::function<void(const Tensor& out_grad, std::vector<Tensor*>& parent_grads)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so the reverse
/// of insertion order is a valid topological order for the backward sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value, std::string label = "input");
  Var parameter(Tensor value, std::string label);

  Var record(Tensor value, std::string op, std::vector<Var> parents, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every parameter.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Layer label attached to subsequently recorded nodes.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  /// Scope/op of the first node whose value contains NaN or Inf.
  const std::optional<std::string>& first_non_finite() const { return first_non_finite_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::string label;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable references while recording
  std::string scope_;
  std::optional<std::string> first_non_finite_;
};

}  // namespace fedefm::nn
