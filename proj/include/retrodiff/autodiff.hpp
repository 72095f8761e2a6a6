#pragma once

// Tape-based reverse-mode automatic differentiation over rank-1/rank-2 tensors.
//
// A Tape records every op in creation order, which is already a topological
// order, so backward() walks the record once from the loss down to the first
// node. Parameters live outside the tape and receive their gradients by
// accumulation, which lets several per-sample tapes feed one optimizer step.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <type_traits>

#include "retrodiff/tensor.hpp"

namespace retrodiff {

template <typename T>
class Tape;

// A trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T{0}); }
};

// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is being propagated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  // With record=false the tape only evaluates values: no closures are kept
  // and backward() is unavailable.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  // Gradient after backward(); zeros when nothing flowed into the node.
  const Tensor<T>& grad(Var<T> v);

  void backward(Var<T> loss);
  void reset();

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  // Number of nodes visited by the last backward pass.
  std::size_t visited() const noexcept { return visited_; }

  // Op-author interface.
  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, const char* op);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool needs_grad(Var<T> v) const { return needs_grad(v.id); }
  Tensor<T>& grad_buffer(std::size_t id);
  const Tensor<T>& node_value(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
  std::size_t visited_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

namespace ad {

// a[m×k] · b[k×n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// a[m×k] · b[n×k]ᵀ
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
// x[m×k] · w[k×n] + bias[n]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, std::type_identity_t<T> factor);
// a[m×n] + row[n] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row);

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
// mean((a - target)²) over all elements; target carries no gradient.
template <typename T>
Var<T> mse(Var<T> a, const Tensor<T>& target);

// axis 0 normalizes columns, axis 1 (or the only axis of a vector) normalizes rows.
template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis);
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::type_identity_t<T> eps = T(1e-5));

// softmax(q kᵀ / √d) v, computed independently per head on column slices.
// With heads == 1 this is plain scaled dot-product attention.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads = 1);

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

}  // namespace ad

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace retrodiff
