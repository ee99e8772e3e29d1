#pragma once

#include "demix/numerics/tensor.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace demix {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Reverse-mode tape. Values are recorded in evaluation order; backward()
/// visits nodes in exactly the reverse of that order. Parameters are leaves
/// that borrow their storage; their gradients are keyed by parameter name.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Registers a named parameter. Repeated registration of the same name
  /// returns the same node so that gradients from every use accumulate.
  Var parameter(const std::string& name, const Tensor<T>& value, bool trainable = true) {
    if (auto it = params_.find(name); it != params_.end()) return Var{it->second};
    Node n;
    n.borrowed = &value;
    n.requires_grad = grad_enabled_ && trainable;
    Var v = push(std::move(n));
    params_.emplace(name, v.id);
    param_order_.push_back(name);
    return v;
  }

  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (grad_enabled_) {
      for (Var p : parents) {
        if (p.valid() && nodes_[p.id].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }

  bool has_grad(Var v) const { return v.valid() && !nodes_.at(v.id).grad.empty(); }

  /// Gradient accumulator of `v`, zero-initialised on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && value(v).size() > 0) n.grad = Tensor<T>(value(v).shape(), T{0});
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward function in
  /// reverse recording order.
  void backward(Var root) {
    if (!grad_enabled_) throw std::logic_error("backward on a tape with gradients disabled");
    if (value(root).size() != 1) throw std::invalid_argument("backward requires a scalar root");
    if (!nodes_[root.id].requires_grad) return;
    grad(root)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  /// Gradient of a named parameter after backward(); nullptr when the
  /// parameter was never registered or received no gradient.
  const Tensor<T>* param_grad(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  /// Parameter names in registration order.
  const std::vector<std::string>& parameter_names() const { return param_order_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> owned;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  std::vector<std::string> param_order_;
};

}  // namespace demix
