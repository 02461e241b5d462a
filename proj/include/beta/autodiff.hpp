#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "beta/tensor.hpp"

namespace beta::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the recorded computation graph. `backward_fn` reads the
// node's own gradient and accumulates into its parents.
class Node {
 public:
  Tensor value;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Tensor& ensure_grad();
  bool has_grad() const { return has_grad_; }
  Tensor& grad() { return grad_; }
  void clear_grad();

 private:
  Tensor grad_;
  bool has_grad_ = false;
};

// Value handle into the graph. Cheap to copy; shares the underlying node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  // Leaf with no gradient (inputs, labels).
  static Var constant(Tensor t);
  // Leaf that accumulates gradients across backward passes until cleared.
  static Var param(Tensor t);

  bool valid() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  Tensor& grad() { return n_->ensure_grad(); }
  bool has_grad() const { return n_->has_grad(); }
  void clear_grad() { n_->clear_grad(); }
  bool requires_grad() const { return n_->requires_grad; }
  double scalar() const;

  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

// ---- graph-building operations ----
Var matmul(const Var& a, const Var& b);          // (N,D) x (D,M) -> (N,M)
Var add_rowwise(const Var& a, const Var& bias);  // (N,M) + (1,M)
Var relu(const Var& a);
Var log_softmax_rows(const Var& a);  // stable, max-subtraction + log-sum-exp
Var exp_elem(const Var& a);
Var log_clamped(const Var& a, double floor = 1e-12);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var offset(const Var& a, double c);
Var sum_all(const Var& a);    // -> scalar
Var mean_all(const Var& a);   // -> scalar
Var mean_rows(const Var& a);  // (N,K) -> (1,K) column means
// Identity forward; backward multiplies the incoming gradient by -gamma.
// gamma == 0 propagates nothing at all (structurally removed branch).
Var grad_reverse(const Var& a, double gamma);

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// Count of log_clamped() arguments that hit the floor since the last reset.
std::uint64_t log_clamp_events();
void reset_log_clamp_events();

}  // namespace beta::ad
