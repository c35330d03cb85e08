#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/rng.hpp"

namespace cgmm {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;  // closures capture what they need

  std::size_t size() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Value-semantic handle onto a node of the reverse-mode autodiff tape.
///
/// Tensors are n-dimensional row-major arrays of 64-bit reals. Ops build a
/// DAG of nodes; Tensor::backward() runs a deterministic topological sweep
/// seeding d(root)/d(root) = 1. Data is never mutated in place by ops, so a
/// node's forward value stays valid for its backward closure.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<int> shape, std::vector<double> data,
         bool requires_grad = false) {
    std::size_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw validation_error("tensor extent must be positive, got shape " + shape_str(shape));
      n *= static_cast<std::size_t>(e);
    }
    if (n != data.size()) {
      throw validation_error("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e > 0 ? e : 0);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e > 0 ? e : 0);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  /// Gaussian init with a named deterministic stream.
  static Tensor randn(std::vector<int> shape, double stddev, std::uint64_t seed,
                      std::string_view stream, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    RngStream rng(seed, stream);
    for (double& x : t.node->data) x = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return node != nullptr; }
  const std::vector<int>& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node->shape.size()); }
  std::size_t numel() const { return node->data.size(); }
  bool requires_grad() const { return node->requires_grad; }

  std::vector<double>& data() { return node->data; }
  const std::vector<double>& data() const { return node->data; }
  std::vector<double>& grad() {
    node->ensure_grad();
    return node->grad;
  }
  const std::vector<double>& grad() const {
    node->ensure_grad();
    return node->grad;
  }

  double item() const {
    if (numel() != 1) {
      throw validation_error("item(): tensor has " + std::to_string(numel()) + " elements");
    }
    return node->data[0];
  }

  double at(int i, int j) const {  // 2-d convenience accessor
    return node->data[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                      static_cast<std::size_t>(j)];
  }

  void zero_grad() {
    if (node->requires_grad) node->grad.assign(node->data.size(), 0.0);
  }

  /// Reverse sweep from a scalar root. Topological order is a deterministic
  /// function of graph construction order.
  void backward() const {
    if (numel() != 1) throw validation_error("backward(): root must be a scalar");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
      TensorNode* n;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (node->requires_grad) {
      stack.push_back({node.get(), 0});
      seen.insert(node.get());
    }
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.n->parents.size()) {
        TensorNode* p = f.n->parents[f.next_parent++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
    node->ensure_grad();
    node->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward();
    }
  }

  void check_finite(const std::string& what) const {
    if (!all_finite(node->data)) {
      throw numeric_error("non-finite value in " + what);
    }
  }

  std::shared_ptr<TensorNode> node;
};

/// Named parameter registry. std::map keeps iteration order sorted by name,
/// which fixes checkpoint layout and optimizer update order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw validation_error("duplicate parameter name: " + name);
    t.node->requires_grad = true;
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw validation_error("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  std::map<std::string, Tensor>& map() { return params_; }
  const std::map<std::string, Tensor>& map() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace cgmm
