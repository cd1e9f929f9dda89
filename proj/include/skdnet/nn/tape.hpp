#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "skdnet/nn/tensor.hpp"

namespace skd::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode autodiff tape. Every op appends a node holding its value
/// and, when any input needs a gradient, a closure that propagates the
/// node's output gradient into its inputs. Values are checked for NaN/Inf
/// as they are recorded; a failure names the op and the current scope.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  /// Leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  /// Leaf that accumulates a gradient (when gradients are enabled).
  Var leaf(Tensor<T> value);

  /// Appends an op result. `fn` is dropped when no input needs a gradient.
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  /// Gradient buffer, zero-initialized on first access.
  Tensor<T>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[static_cast<std::size_t>(v.id)].grad.data.empty(); }

  /// Seeds d(root)/d(root) = 1 and runs every recorded closure in reverse.
  void backward(Var root);

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  void set_finite_checks(bool on) { finite_checks_ = on; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::string scope_;
  bool grad_enabled_ = true;
  bool finite_checks_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace skd::nn
