#include "pesrs/core/tape.hpp"

#include <stdexcept>
#include <string>

namespace pesrs {

template <typename Real>
Tape<Real>::Tape(const ParamSet<Real>& params, GradSet<Real>* grads)
    : params_(params), grads_(grads), param_nodes_(params.size()) {
  if (grads_ && grads_->size() != params.size()) {
    throw ShapeError("Tape: gradient buffer does not match parameter set");
  }
}

template <typename Real>
typename Tape<Real>::Node& Tape<Real>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
  return nodes_[v.id];
}

template <typename Real>
const typename Tape<Real>::Node& Tape<Real>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
  return nodes_[v.id];
}

template <typename Real>
Var Tape<Real>::constant(Tensor<Real> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
Var Tape<Real>::param(std::string_view name) {
  return param(params_.index(name));
}

template <typename Real>
Var Tape<Real>::param(std::size_t index) {
  Var& cached = param_nodes_.at(index);
  if (cached.valid()) return cached;
  Node& n = nodes_.emplace_back();
  n.external = &params_.value(index);
  if (grads_) {
    n.requires_grad = true;
    n.external_grad = &(*grads_)[index];
  }
  cached = Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  return cached;
}

template <typename Real>
Var Tape<Real>::record(Tensor<Real> value, std::span<const Var> inputs,
                       Backward backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || node(in).requires_grad;
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
Tensor<Real>* Tape<Real>::grad_slot(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (n.external_grad) return n.external_grad;
  if (n.grad.empty() && !n.value_ref().empty()) {
    n.grad = Tensor<Real>(n.value_ref().shape());
  }
  return &n.grad;
}

template <typename Real>
void Tape<Real>::backward(Var root) {
  Node& r = node(root);
  if (r.value_ref().size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_string(r.value_ref().shape()));
  }
  Tensor<Real>* seed = grad_slot(root);
  if (!seed) return;
  (*seed)[0] += Real{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace pesrs
