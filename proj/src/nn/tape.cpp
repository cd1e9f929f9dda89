#include "skdnet/nn/tape.hpp"

#include <fmt/format.h>

#include "skdnet/errors.hpp"

namespace skd::nn {

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, {}, false});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, {}, grad_enabled_});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (finite_checks_ && !value.all_finite())
    throw NumericalError(fmt::format("non-finite value produced by '{}'{}", op, scope_.empty() ? "" : " in " + scope_));
  bool needs = false;
  if (grad_enabled_)
    for (Var in : inputs) needs = needs || needs_grad(in);
  nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  grad(root).fill(T(1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.data.empty()) continue;
    // The closure may allocate gradients of earlier nodes, which never
    // reallocates `nodes_`, so `n` stays valid.
    n.backward(*this, n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace skd::nn
