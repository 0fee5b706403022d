#include "fedefm/nn/autodiff.hpp"

#include "fedefm/common/errors.hpp"

namespace fedefm::nn {

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Tensor value, std::string label) {
  return record(std::move(value), std::move(label), {}, nullptr);
}

Var Graph::parameter(Tensor value, std::string label) {
  Var v = record(std::move(value), label, {}, nullptr);
  nodes_.back().requires_grad = true;
  nodes_.back().label = std::move(label);
  return v;
}

Var Graph::record(Tensor value, std::string op, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.label = scope_.empty() ? op : scope_ + "/" + op;
  if (!first_non_finite_ && !value.all_finite()) first_non_finite_ = node.label;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (&p.graph() != this) throw Error("operand recorded on a different graph");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw Error("backward root belongs to another graph");
  if (nodes_[root.id()].value.size() != 1) throw ShapeError("backward root must be a scalar");
  for (auto& n : nodes_)
    if (n.requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_[root.id()].grad[0] = 1.0;

  std::vector<Tensor*> slots;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward) continue;
    slots.clear();
    for (auto p : node.parents)
      slots.push_back(nodes_[p].requires_grad ? &nodes_[p].grad : nullptr);
    node.backward(node.grad, slots);
  }
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.requires_grad) throw Error("node '" + n.label + "' does not require a gradient");
  return n.grad;
}

}  // namespace fedefm::nn
