#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "agra/core/param.hpp"
#include "agra/core/tensor.hpp"

namespace agra::ad {

// Reverse-mode autodiff over a dynamically built DAG. Every op allocates a
// fresh value tensor; when no input requires gradients the op returns a
// detached constant and records nothing, so inference-style forwards carry
// no tape overhead.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value);

inline Tensor& ensure_grad(const Var& v) {
  if (v->grad.empty()) v->grad = Tensor::zeros(v->value.shape());
  return v->grad;
}

inline void accumulate(const Var& v, const Tensor& g) {
  if (!v->requires_grad) return;
  ensure_grad(v).add_(g);
}

// Seeds root with d(root)/d(root) = 1 and runs reverse topological sweep.
// Root must be scalar.
void backward(const Var& root);

// Binds Params to graph leaves. Each Param gets exactly one leaf per tape,
// so every use shares a gradient accumulator; collect() pushes those
// accumulated leaf gradients into Param::grad.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var operator()(Param& p);

  bool grad_enabled() const { return grad_enabled_; }

  // backward() on the loss, then transfer leaf grads into Param::grad.
  void backward_collect(const Var& loss);

 private:
  bool grad_enabled_;
  std::vector<std::pair<Param*, Var>> bound_;
  std::unordered_map<Param*, size_t> index_;
};

// ---- ops -------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);              // [m,k]x[k,n]
Var add_rowvec(const Var& m, const Var& v);          // [r,c] + [c] per row
Var relu(const Var& x);
// Elementwise clip; gradient passes only strictly inside (lo, hi).
Var clamp(const Var& x, double lo, double hi);
Var reshape(const Var& x, std::vector<int> shape);
Var row(const Var& m, int i);                        // [r,c] -> [c]
Var stack(const std::vector<Var>& items);            // k x [s...] -> [k,s...]
Var concat(const std::vector<Var>& items);           // rank-1 concat
Var detach(const Var& x);

// Batched NCHW convolution via im2col + GEMM. pad is symmetric zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Global average pool: [n,c,h,w] -> [n,c].
Var avg_pool_full(const Var& x);

// Per-row standardization of [n,d]: each row is centered and divided by
// sqrt(var + eps). No learned affine.
Var layer_norm_rows(const Var& x, double eps = 1e-5);

// Window copy from one sample of a batched map: [n,c,h,w] -> [c,hs,ws].
Var crop(const Var& x, int sample, int r0, int c0, int hs, int ws);

// Identity forward, multiplies the gradient by -lambda on the way back.
Var grad_reverse(const Var& x, double lambda);

// Mean softmax cross-entropy over rows of [n,c] logits.
Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels);

// (weight/n) * sum_i softplus(sign * x_i) over a flat view of x.
// With sign=-1 this is -mean log sigmoid(x); with sign=+1 it is
// -mean log(1 - sigmoid(x)). Both branches are overflow-safe.
Var mean_softplus(const Var& x, double sign, double weight = 1.0);

// sum_i coeffs[i] * scalars[i], as a scalar node.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs);

}  // namespace agra::ad
