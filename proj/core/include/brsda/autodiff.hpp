#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "brsda/tensor.hpp"

namespace brsda::ag {

// Reverse-mode autodiff over Tensor values. Graphs are built per forward
// pass as shared_ptr DAGs; backward(root) zeroes every reachable gradient,
// seeds the scalar root with 1 and runs the tape in reverse topological
// order. Parameters are leaves that persist across graphs; everything else
// is rebuilt each step.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated by backward()
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grads
};

Var constant(Tensor v);
inline Var leaf(Tensor v) { return constant(std::move(v)); }

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp_(const Var& a);
Var square(const Var& a);
Var gelu(const Var& a);  // exact erf form

// Value-level clamp with identity (straight-through) backward; the clamp is
// a numerical guard outside the gradient path.
Var clamp_pass_through(const Var& a, double lo, double hi);

Var matmul(const Var& a, const Var& b);          // {B,I} x {I,O} -> {B,O}
Var add_rowvec(const Var& mat, const Var& vec);  // {B,F} + {F}
Var reshape(const Var& a, std::vector<std::size_t> shape);
Var sum(const Var& a);  // -> {1}

// ---------------------------------------------------------------------------
// Neural-net ops
// ---------------------------------------------------------------------------
Var conv2d_3x3(const Var& x, const Var& w, const Var& b);  // pad 1, stride 1
Var maxpool2(const Var& x);                                // 2x2, stride 2
Var global_avg_pool(const Var& x);                         // {B,C,H,W} -> {B,C}

// Running statistics for batch normalization; owned by the layer, updated
// only on training-mode forward passes.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  std::int64_t updates = 0;
};

// Per-feature (rank 2, axis 1) or per-channel (rank 4, axis 1) batch norm.
// Training mode normalizes with batch statistics and updates `stats`;
// eval mode normalizes with the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormStats* stats, bool training, double eps = 1e-5);

// Mean over the batch of -log softmax(logits)[label]. Numerically stable.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

void backward(const Var& root);

// Graph-free helpers for evaluation paths.
Tensor softmax_rows(const Tensor& logits);

}  // namespace brsda::ag
