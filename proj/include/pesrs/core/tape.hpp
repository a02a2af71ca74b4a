#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "pesrs/core/params.hpp"
#include "pesrs/core/tensor.hpp"

namespace pesrs {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; `backward`
/// sweeps them in reverse. Parameter leaves read their values straight from
/// the bound ParamSet and, when a GradSet is attached, accumulate gradients
/// directly into it. Without a GradSet nothing is retained for backward.
template <typename Real>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Real>& grad_out)>;

  explicit Tape(const ParamSet<Real>& params, GradSet<Real>* grads = nullptr);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<Real> value);
  Var param(std::string_view name);
  Var param(std::size_t index);

  const Tensor<Real>& value(Var v) const { return node(v).value_ref(); }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool tracking() const { return grads_ != nullptr; }
  const ParamSet<Real>& params() const { return params_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Records an op result. The backward closure is kept only when at least
  /// one input needs a gradient.
  Var record(Tensor<Real> value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor<Real> value, std::initializer_list<Var> inputs,
             Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  /// Gradient accumulator for `v`, allocated as zeros on first use; nullptr
  /// when `v` does not need a gradient.
  Tensor<Real>* grad_slot(Var v);

  /// Seeds d(root)/d(root) = 1 (root must hold one element) and propagates.
  void backward(Var root);

 private:
  struct Node {
    Tensor<Real> value;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> grad;
    Tensor<Real>* external_grad = nullptr;
    Backward backward;
    bool requires_grad = false;

    const Tensor<Real>& value_ref() const { return external ? *external : value; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  const ParamSet<Real>& params_;
  GradSet<Real>* grads_;
  std::deque<Node> nodes_;
  std::vector<Var> param_nodes_;
};

}  // namespace pesrs
