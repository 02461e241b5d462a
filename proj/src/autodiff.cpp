#include "beta/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace beta::ad {

namespace {

std::atomic<std::uint64_t> g_log_clamp_events{0};

void check_2d(const Tensor& t, const char* who) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(who) + ": tensor must be 2-D, got " +
                                t.shape_str());
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  bool needs = false;
  for (const auto& p : n->parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) n->backward_fn = std::move(backward_fn);
  return n;
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (!has_grad_) {
    grad_ = Tensor::zeros(value.shape());
    has_grad_ = true;
  }
  return grad_;
}

void Node::clear_grad() {
  grad_ = Tensor();
  has_grad_ = false;
}

Var Var::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = false;
  return Var(n);
}

Var Var::param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(n);
}

double Var::scalar() const {
  if (n_->value.size() != 1) {
    throw std::invalid_argument("scalar(): tensor has " +
                                std::to_string(n_->value.size()) + " elements");
  }
  return n_->value.at(std::size_t{0});
}

Var matmul(const Var& a, const Var& b) {
  check_2d(a.value(), "matmul lhs");
  check_2d(b.value(), "matmul rhs");
  const std::size_t n = a.value().rows(), d = a.value().cols();
  const std::size_t d2 = b.value().rows(), m = b.value().cols();
  if (d != d2) {
    throw std::invalid_argument("matmul: inner dimensions " + a.value().shape_str() +
                                " x " + b.value().shape_str());
  }
  Tensor out = Tensor::zeros({n, m});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = av[i * d + k];
      for (std::size_t j = 0; j < m; ++j) ov[i * m + j] += aik * bv[k * m + j];
    }
  }
  return Var(make_node(std::move(out), {a.node(), b.node()}, [n, d, m](Node& self) {
    const double* g = self.grad().data();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* ga = pa.ensure_grad().data();
      const double* bv = pb.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g[i * m + j];
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += gij * bv[k * m + j];
        }
    }
    if (pb.requires_grad) {
      double* gb = pb.ensure_grad().data();
      const double* av = pa.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
          const double aik = av[i * d + k];
          for (std::size_t j = 0; j < m; ++j) gb[k * m + j] += aik * g[i * m + j];
        }
    }
  }));
}

Var add_rowwise(const Var& a, const Var& bias) {
  check_2d(a.value(), "add_rowwise lhs");
  check_2d(bias.value(), "add_rowwise bias");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (bias.value().rows() != 1 || bias.value().cols() != m) {
    throw std::invalid_argument("add_rowwise: bias shape " + bias.value().shape_str() +
                                " does not broadcast over " + a.value().shape_str());
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += bias.value().at(0, j);
  return Var(make_node(std::move(out), {a.node(), bias.node()}, [n, m](Node& self) {
    const double* g = self.grad().data();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* ga = pa.ensure_grad().data();
      for (std::size_t i = 0; i < n * m; ++i) ga[i] += g[i];
    }
    if (pb.requires_grad) {
      double* gb = pb.ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  }));
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::max(0.0, out.at(i));
  return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    double* ga = pa.ensure_grad().data();
    const double* x = pa.value.data();
    for (std::size_t i = 0; i < pa.value.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  }));
}

Var log_softmax_rows(const Var& a) {
  check_2d(a.value(), "log_softmax_rows");
  const std::size_t n = a.value().rows(), k = a.value().cols();
  Tensor out = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = a.value().at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, a.value().at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(a.value().at(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = a.value().at(i, j) - lse;
  }
  return Var(make_node(std::move(out), {a.node()}, [n, k](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    const double* lp = self.value.data();
    double* ga = pa.ensure_grad().data();
    for (std::size_t i = 0; i < n; ++i) {
      double rowsum = 0.0;
      for (std::size_t j = 0; j < k; ++j) rowsum += g[i * k + j];
      for (std::size_t j = 0; j < k; ++j)
        ga[i * k + j] += g[i * k + j] - std::exp(lp[i * k + j]) * rowsum;
    }
  }));
}

Var exp_elem(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::exp(out.at(i));
  return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    const double* y = self.value.data();
    double* ga = pa.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += g[i] * y[i];
  }));
}

Var log_clamped(const Var& a, double floor) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.at(i) < floor) {
      g_log_clamp_events.fetch_add(1, std::memory_order_relaxed);
      out.at(i) = std::log(floor);
    } else {
      out.at(i) = std::log(out.at(i));
    }
  }
  return Var(make_node(std::move(out), {a.node()}, [floor](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    const double* x = pa.value.data();
    double* ga = pa.ensure_grad().data();
    for (std::size_t i = 0; i < pa.value.size(); ++i)
      if (x[i] >= floor) ga[i] += g[i] / x[i];
  }));
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += b.value().at(i);
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double* g = self.grad().data();
    for (int side = 0; side < 2; ++side) {
      Node& p = *self.parents[side];
      if (!p.requires_grad) continue;
      double* gp = p.ensure_grad().data();
      for (std::size_t i = 0; i < p.value.size(); ++i) gp[i] += g[i];
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= b.value().at(i);
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double* g = self.grad().data();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* gp = pa.ensure_grad().data();
      for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += g[i];
    }
    if (pb.requires_grad) {
      double* gp = pb.ensure_grad().data();
      for (std::size_t i = 0; i < pb.value.size(); ++i) gp[i] -= g[i];
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= b.value().at(i);
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double* g = self.grad().data();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* gp = pa.ensure_grad().data();
      const double* bv = pb.value.data();
      for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += g[i] * bv[i];
    }
    if (pb.requires_grad) {
      double* gp = pb.ensure_grad().data();
      const double* av = pa.value.data();
      for (std::size_t i = 0; i < pb.value.size(); ++i) gp[i] += g[i] * av[i];
    }
  }));
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
  return Var(make_node(std::move(out), {a.node()}, [c](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    double* gp = pa.ensure_grad().data();
    for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += c * g[i];
  }));
}

Var offset(const Var& a, double c) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += c;
  return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    double* gp = pa.ensure_grad().data();
    for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += g[i];
  }));
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value().at(i);
  return Var(make_node(Tensor::scalar(s), {a.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double g = self.grad().at(std::size_t{0});
    double* gp = pa.ensure_grad().data();
    for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += g;
  }));
}

Var mean_all(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  check_2d(a.value(), "mean_rows");
  const std::size_t n = a.value().rows(), k = a.value().cols();
  if (n == 0) throw std::invalid_argument("mean_rows: empty batch");
  Tensor out = Tensor::zeros({1, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(0, j) += a.value().at(i, j);
  for (std::size_t j = 0; j < k; ++j) out.at(0, j) /= static_cast<double>(n);
  return Var(make_node(std::move(out), {a.node()}, [n, k](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const double* g = self.grad().data();
    double* gp = pa.ensure_grad().data();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) gp[i * k + j] += g[j] * inv;
  }));
}

Var grad_reverse(const Var& a, double gamma) {
  Tensor out = a.value();
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->parents = {a.node()};
  // gamma == 0 must be bit-identical to the branch being absent: skip
  // backward entirely instead of accumulating zeros.
  n->requires_grad = a.node()->requires_grad && gamma != 0.0;
  if (n->requires_grad) {
    n->backward_fn = [gamma](Node& self) {
      Node& pa = *self.parents[0];
      if (!pa.requires_grad) return;
      const double* g = self.grad().data();
      double* gp = pa.ensure_grad().data();
      for (std::size_t i = 0; i < pa.value.size(); ++i) gp[i] += -gamma * g[i];
    };
  }
  return Var(n);
}

void backward(const Var& root) {
  if (!root.valid()) throw std::invalid_argument("backward: empty handle");
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " +
                                root.value().shape_str());
  }
  if (!root.requires_grad()) {
    throw std::logic_error("backward: no recorded graph reaches any parameter");
  }

  // Iterative post-order DFS over nodes that participate in gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    bool descended = false;
    while (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (descended) continue;
    order.push_back(node);
    stack.pop_back();
  }

  root.node()->ensure_grad().at(std::size_t{0}) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

std::uint64_t log_clamp_events() {
  return g_log_clamp_events.load(std::memory_order_relaxed);
}

void reset_log_clamp_events() {
  g_log_clamp_events.store(0, std::memory_order_relaxed);
}

}  // namespace beta::ad
