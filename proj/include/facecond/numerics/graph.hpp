#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "facecond/numerics/tensor.hpp"

namespace facecond {

// Handle to a node in a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

// Internal reverse-mode tape. Forward ops evaluate eagerly; every op whose
// inputs require gradients records a backward closure. Nodes that do not
// require gradients (frozen weights, data) cost nothing on the way back.
//
// All values are rank-2 ([rows x cols]); vectors are [1 x n]. Scalars are
// [1 x 1].
template <class T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;

  Var constant(TensorT value) { return push(std::move(value), false); }
  Var leaf(TensorT value, bool requires_grad) { return push(std::move(value), requires_grad); }

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Accumulated gradient; an all-zero tensor if nothing flowed into v.
  TensorT grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1 for a [1x1] node and runs the tape backward.
  void backward(Var out);

  Var matmul(Var a, Var b);
  // a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // x[m x n] + row[1 x n] on every row.
  Var add_row(Var x, Var row);
  // x[m x n] * row[1 x n] on every row.
  Var mul_row(Var x, Var row);
  Var scale(Var x, T s);
  Var axpy(Var a, Var b, T alpha);  // a + alpha * b
  Var add_scalar(Var x, T s);

  Var layer_norm(Var x, T eps);
  // x * (1 + sigma) + mu with mu, sigma given as [1 x n] rows.
  Var modulate(Var x, Var mu, Var sigma);
  // x + gamma * branch with gamma a [1 x n] row.
  Var gated_residual(Var x, Var branch, Var gamma);
  Var softmax_rows(Var x);
  Var gelu(Var x);
  Var silu(Var x);

  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var x, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var mean_rows(Var x);
  Var reshape(Var x, std::size_t rows, std::size_t cols);
  // out.flat[i] = x.flat[index[i]]; backward scatter-adds.
  Var gather(Var x, std::vector<std::uint32_t> index, std::size_t rows, std::size_t cols);

  // Scalar losses.
  Var mean_squared_error(Var a, Var b);
  // Mean over entries with mask == 1; the mask has the flat length of a.
  Var masked_mse(Var a, Var b, std::vector<T> mask);
  Var cosine(Var a, Var b);

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
  };

  Var push(TensorT value, bool requires_grad);
  TensorT& grad_ref(Var v);
  bool any_grad(std::initializer_list<Var> vs) const;
  void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> tape_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace facecond
