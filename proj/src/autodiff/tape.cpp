#include "lpgnas/autodiff/tape.hpp"

#include <cassert>

namespace lpgnas::ad {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape());
  grad.fill(0);
  touched = false;
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

bool Var::requires_grad() const { return tape().requires_grad(*this); }

const Tape::Node& Tape::node(Var v) const {
  if (&v.tape() != this || v.id() >= nodes_.size())
    throw ContractError("Var does not belong to this tape");
  return nodes_[v.id()];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, false, true, {}, &param});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (Var in : inputs) inputs_finite = inputs_finite && node(in).value.all_finite();
  assert(!inputs_finite || value.all_finite());
#endif
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || node(in).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, false, needs_grad,
                        needs_grad ? std::move(backward) : BackwardFn{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    if (n.grad.same_shape(n.value))
      n.grad.fill(0);
    else
      n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate_grad(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  Tensor& buf = grad_buffer(v);
  if (buf.size() != g.size())
    throw DimensionError("gradient shape " + shape_string(g.shape()) +
                         " does not match value shape " + shape_string(buf.shape()));
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(root.value.shape()));
  for (Node& n : nodes_) n.has_grad = false;
  if (!root.requires_grad) return;
  grad_buffer(loss)[0] = 1;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      Parameter& p = *n.param;
      if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.shape());
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
      p.touched = true;
    }
  }
}

}  // namespace lpgnas::ad
